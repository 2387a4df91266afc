"""Temporal smoothing and max response."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from subfuse.errors import ConfigError, DataValidationError
from subfuse.temporal import FrameScoreSeries, aggregate, max_response, smooth


def series(scores):
    scores = list(scores)
    return FrameScoreSeries(
        video_id="v", times=tuple(0.5 * i for i in range(len(scores))), scores=np.array(scores)
    )


score_lists = st.lists(
    st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=1, max_size=25
)


class TestSmooth:
    def test_window_one_is_identity(self):
        s = series([1.0, -2.0, 3.5])
        out = smooth(s, 1)
        np.testing.assert_array_equal(out.scores, s.scores)

    def test_spike_with_window_three(self):
        """[0, 3, 0] smooths to [1.5, 1, 1.5]: the edge windows clip to the
        two frames that exist."""
        out = smooth(series([0.0, 3.0, 0.0]), 3)
        np.testing.assert_allclose(out.scores, [1.5, 1.0, 1.5])

    def test_constant_series_unchanged(self):
        out = smooth(series([2.0] * 7), 5)
        np.testing.assert_allclose(out.scores, 2.0)

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError):
            smooth(series([1.0, 2.0]), 2)

    def test_length_preserved(self):
        out = smooth(series(range(9)), 7)
        assert len(out) == 9

    @given(score_lists, st.sampled_from([1, 3, 5, 7]))
    def test_windows_average_what_exists(self, scores, window):
        out = smooth(series(scores), window)
        n = len(scores)
        half = window // 2
        for i in range(n):
            lo, hi = max(0, i - half), min(n, i + half + 1)
            assert out.scores[i] == pytest.approx(np.mean(scores[lo:hi]))


class TestMaxResponse:
    def test_plain_max(self):
        assert max_response(series([1.0, 5.0, 2.0])) == 5.0

    def test_single_frame(self):
        assert max_response(series([0.25])) == 0.25

    def test_empty_rejected(self):
        empty = FrameScoreSeries(video_id="v", times=(), scores=np.array([]))
        with pytest.raises(DataValidationError):
            max_response(empty)

    def test_matches_brute_force_over_windows(self):
        rng = np.random.default_rng(3)
        scores = rng.standard_normal(15)
        s = series(scores)
        for window in (1, 3, 5):
            half = window // 2
            brute = max(
                np.mean(scores[max(0, i - half) : min(len(scores), i + half + 1)])
                for i in range(len(scores))
            )
            assert aggregate(s, window) == pytest.approx(brute)


class TestInvariants:
    @given(score_lists, st.sampled_from([1, 3, 5]), st.floats(-10, 10, allow_nan=False))
    def test_constant_shift_passes_through(self, scores, window, c):
        """smooth-then-max of (s + c) equals smooth-then-max of s, plus c."""
        base = aggregate(series(scores), window)
        shifted = aggregate(series([x + c for x in scores]), window)
        assert shifted == pytest.approx(base + c, abs=1e-9)

    @given(score_lists, st.sampled_from([3, 5, 7]))
    def test_smoothing_cannot_exceed_raw_max(self, scores, window):
        s = series(scores)
        assert aggregate(s, window) <= max_response(s) + 1e-12
