"""Frame-level score series to one video-level score.

The pipeline smooths frame scores with a centered moving average and takes
the maximal response.  At the boundaries the averaging window is clipped to
the frames that exist, so the output keeps the input length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataValidationError


@dataclass(frozen=True)
class FrameScoreSeries:
    video_id: str
    times: tuple[float, ...]
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        object.__setattr__(self, "scores", scores)
        if scores.ndim != 1 or scores.size != len(self.times):
            raise DataValidationError(f"video {self.video_id!r}: times/scores length mismatch")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise DataValidationError(f"video {self.video_id!r}: times must be strictly increasing")
        if scores.size and not np.isfinite(scores).all():
            raise DataValidationError(f"video {self.video_id!r}: non-finite score")
        scores.setflags(write=False)

    def __len__(self) -> int:
        return len(self.times)


def smooth(series: FrameScoreSeries, window: int) -> FrameScoreSeries:
    """Centered moving average with an odd window.

    Near the edges the window is clipped to available frames, e.g. scores
    [0, 3, 0] with window 3 smooth to [1.5, 1, 1.5].
    """
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"window must be an odd integer >= 1, got {window}")
    n = len(series)
    if window == 1 or n == 0:
        return series
    half = window // 2
    scores = series.scores
    out = np.empty(n)
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + half + 1)
        out[i] = scores[lo:hi].mean()
    return FrameScoreSeries(video_id=series.video_id, times=series.times, scores=out)


def max_response(series: FrameScoreSeries) -> float:
    """Maximum score in the series."""
    if len(series) == 0:
        raise DataValidationError(f"video {series.video_id!r}: empty score series")
    return float(series.scores.max())


def aggregate(series: FrameScoreSeries, window: int) -> float:
    """smooth + max: the video-level response of a frame-level classifier."""
    return max_response(smooth(series, window))
