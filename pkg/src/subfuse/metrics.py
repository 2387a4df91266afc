"""Ranking metrics: average precision, precision at k, and evaluation reports.

Rankings are deterministic: items sort by score descending, and exact score
ties break by ascending video id.  That rule makes every metric in this
module a pure function of (scores, labels), which the regression tests rely
on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError, DataValidationError, DegenerateLabelsError


@dataclass(frozen=True)
class ScoredRanking:
    """Videos ordered by score descending, ties broken by ascending id.

    items: tuple of (video_id, score, relevant).
    """

    items: tuple[tuple[str, float, bool], ...]

    def __len__(self) -> int:
        return len(self.items)

    @property
    def video_ids(self) -> tuple[str, ...]:
        return tuple(item[0] for item in self.items)

    @property
    def num_relevant(self) -> int:
        return sum(1 for item in self.items if item[2])


def make_ranking(scores: Mapping[str, float], relevance: Mapping[str, bool]) -> ScoredRanking:
    """Build a ScoredRanking from per-video scores and relevance labels.

    Every scored video must have a label.
    """
    missing = [vid for vid in scores if vid not in relevance]
    if missing:
        raise DataValidationError(f"no label for scored videos: {sorted(missing)[:5]}")
    if len(set(scores)) != len(scores):
        raise DataValidationError("duplicate video ids in scores")
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    items = tuple((vid, float(s), bool(relevance[vid])) for vid, s in ordered)
    for vid, s, _ in items:
        if not np.isfinite(s):
            raise DataValidationError(f"non-finite score for video {vid!r}")
    return ScoredRanking(items)


def average_precision(ranking: ScoredRanking) -> float:
    """AP = (1/R) * sum over relevant ranks k of (relevant count at k / k)."""
    rel = np.array([item[2] for item in ranking.items], dtype=bool)
    return _ap_from_sorted_relevance(rel)


def precision_at(ranking: ScoredRanking, k: int) -> float:
    """Fraction of relevant items in the top k.

    Lists shorter than k keep denominator k, so missing slots count as
    non-relevant.
    """
    if k < 1:
        raise ConfigError(f"cutoff k must be >= 1, got {k}")
    top = ranking.items[: min(k, len(ranking.items))]
    return sum(1 for item in top if item[2]) / k


def ap_from_scores(scores: np.ndarray, relevant: np.ndarray) -> float:
    """Average precision straight from parallel arrays.

    Ties break by ascending array index; this is the hot path used inside
    fusion weight learning, where items carry no ids.
    """
    scores = np.asarray(scores, dtype=float)
    relevant = np.asarray(relevant, dtype=bool)
    if scores.shape != relevant.shape:
        raise DataValidationError("scores and relevance must have equal length")
    order = np.argsort(-scores, kind="stable")
    return _ap_from_sorted_relevance(relevant[order])


def _ap_from_sorted_relevance(rel: np.ndarray) -> float:
    total = int(rel.sum())
    if total == 0:
        raise DegenerateLabelsError("average precision undefined with zero relevant items")
    ranks = np.arange(1, rel.size + 1)
    precisions = np.cumsum(rel) / ranks
    return float(precisions[rel].sum() / total)


@dataclass(frozen=True)
class EvalReport:
    """AP / P10 / P100 plus the ranking that produced them."""

    ap: float
    p10: float
    p100: float
    num_positives: int
    ranking: ScoredRanking
    run_id: str = ""

    def to_json(self) -> str:
        payload = {
            "ap": self.ap,
            "p10": self.p10,
            "p100": self.p100,
            "num_positives": self.num_positives,
            "run_id": self.run_id,
        }
        return json.dumps(payload, sort_keys=True)


def evaluate(
    scores: Mapping[str, float],
    labels: Mapping[str, bool],
    cutoffs: Iterable[int] = (10, 100),
    run_id: str = "",
) -> EvalReport:
    """Rank all scored videos and compute AP plus precision at each cutoff."""
    ranking = make_ranking(scores, labels)
    ap = average_precision(ranking)
    cut = {k: precision_at(ranking, k) for k in cutoffs}
    return EvalReport(
        ap=ap,
        p10=cut.get(10, precision_at(ranking, 10)),
        p100=cut.get(100, precision_at(ranking, 100)),
        num_positives=ranking.num_relevant,
        ranking=ranking,
        run_id=run_id,
    )


def save_report(report: EvalReport, path) -> None:
    from .corpus import atomic_write_text

    atomic_write_text(path, report.to_json() + "\n")


def load_report(path) -> dict:
    """Read a report JSON file back into a plain dict (the ranking is not persisted)."""
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
