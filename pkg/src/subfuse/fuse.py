"""Late fusion of normalized base-classifier scores.

Two weighting strategies: uniform weights (average fusion) and weights
learned by coordinate ascent directly on val-set average precision.  AP is
piecewise constant in the weights, so there is no gradient to follow; each
coordinate instead line-searches a finite grid that includes zero, which
lets the learner prune useless classifiers outright.

Weights start uniform, a move is accepted only on a strict val-AP
improvement, and ties keep the current value, so the learned model's val
AP can never fall below average fusion's.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import SubclassVocabulary, atomic_write_text, fmt_float
from .errors import ConfigError, DataValidationError, DegenerateLabelsError
from .learn import ClassifierKey
from .metrics import ap_from_scores

PARENT_CLASS = "violence"

DEFAULT_WEIGHT_GRID = tuple(round(0.1 * i, 10) for i in range(21))  # 0.0 .. 2.0
INIT_WEIGHT = 1.0


@dataclass(frozen=True)
class FusionModel:
    """Nonnegative weight per base classifier.

    ``entries`` is ordered (the canonical order is the sorted classifier
    keys); ``val_ap_achieved`` is the val AP of the fused ranking;
    ``ap_trace`` records the val AP after every accepted coordinate update,
    starting from the uniform initialization.
    """

    entries: tuple[tuple[ClassifierKey, float], ...]
    mode: str  # "avg" | "learn"
    val_ap_achieved: float
    ap_trace: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if self.mode not in ("avg", "learn"):
            raise ConfigError(f"fusion mode must be avg or learn, got {self.mode!r}")
        keys = [key for key, _ in self.entries]
        if len(set(keys)) != len(keys):
            raise DataValidationError("duplicate classifier keys in fusion model")
        weights = [w for _, w in self.entries]
        if any(w < 0 for w in weights):
            raise DataValidationError("fusion weights must be nonnegative")
        if not any(w > 0 for w in weights):
            raise DataValidationError("at least one fusion weight must be positive")

    @property
    def keys(self) -> tuple[ClassifierKey, ...]:
        return tuple(key for key, _ in self.entries)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.entries])


@dataclass(frozen=True)
class FusionConfig:
    weight_grid: tuple[float, ...] = DEFAULT_WEIGHT_GRID
    max_rounds: int = 20
    tolerance: float = 1e-6

    def __post_init__(self):
        if 0.0 not in self.weight_grid or INIT_WEIGHT not in self.weight_grid:
            raise ConfigError(f"weight grid must contain 0 and {INIT_WEIGHT}")
        if any(w < 0 for w in self.weight_grid):
            raise ConfigError("weight grid values must be nonnegative")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")


def fuse_scores(model: FusionModel, score_matrix: np.ndarray) -> np.ndarray:
    """fused(v) = sum_i weight_i * score_i(v).

    Columns of ``score_matrix`` must align with ``model.entries``.
    """
    score_matrix = np.atleast_2d(np.asarray(score_matrix, dtype=float))
    if score_matrix.shape[1] != len(model.entries):
        raise DataValidationError(
            f"score matrix has {score_matrix.shape[1]} columns, fusion model has {len(model.entries)} entries"
        )
    return score_matrix @ model.weights


def _check_val_labels(val_labels: np.ndarray) -> np.ndarray:
    val_labels = np.asarray(val_labels, dtype=bool)
    if val_labels.all() or not val_labels.any():
        raise DegenerateLabelsError("val labels are all one class; fusion needs both")
    return val_labels


def uniform_fusion(
    keys: Sequence[ClassifierKey], val_scores: np.ndarray, val_labels: np.ndarray
) -> FusionModel:
    """Average fusion: every classifier at the initialization weight."""
    val_labels = _check_val_labels(val_labels)
    order = sorted(range(len(keys)), key=lambda i: keys[i].sort_key())
    entries = tuple((keys[i], INIT_WEIGHT) for i in order)
    matrix = np.atleast_2d(np.asarray(val_scores, dtype=float))[:, order]
    ap = ap_from_scores(matrix @ np.full(len(keys), INIT_WEIGHT), val_labels)
    return FusionModel(entries=entries, mode="avg", val_ap_achieved=ap, ap_trace=(ap,))


def learn_weights(
    keys: Sequence[ClassifierKey],
    val_scores: np.ndarray,
    val_labels: np.ndarray,
    config: FusionConfig = FusionConfig(),
) -> FusionModel:
    """Coordinate ascent on val AP over a finite weight grid.

    Starts from uniform weights (average fusion).  Coordinates are visited
    in sorted-key order; for each one, val AP is evaluated at every grid
    value with the others held fixed and the best is kept (ties keep the
    current value).  Stops when a full round improves val AP by less than
    ``config.tolerance`` or after ``config.max_rounds`` rounds.
    """
    val_labels = _check_val_labels(val_labels)
    matrix = np.atleast_2d(np.asarray(val_scores, dtype=float))
    if matrix.shape[0] != val_labels.size:
        raise DataValidationError("score matrix rows must match label count")
    if matrix.shape[1] != len(keys):
        raise DataValidationError("score matrix columns must match key count")
    if len(set(keys)) != len(keys):
        raise DataValidationError("duplicate classifier keys")
    order = sorted(range(len(keys)), key=lambda i: keys[i].sort_key())
    sorted_keys = [keys[i] for i in order]
    matrix = matrix[:, order]

    n_coords = len(sorted_keys)
    weights = np.full(n_coords, INIT_WEIGHT)
    fused = matrix @ weights
    current_ap = ap_from_scores(fused, val_labels)
    trace = [current_ap]

    for _ in range(config.max_rounds):
        round_start_ap = current_ap
        for j in range(n_coords):
            column = matrix[:, j]
            best_ap, best_w = current_ap, weights[j]
            for g in config.weight_grid:
                if g == weights[j]:
                    continue
                if g == 0.0 and weights.sum() == weights[j]:
                    continue  # never zero out the last live classifier
                candidate = fused + (g - weights[j]) * column
                ap = ap_from_scores(candidate, val_labels)
                if ap > best_ap:
                    best_ap, best_w = ap, g
            if best_w != weights[j]:
                fused = fused + (best_w - weights[j]) * column
                weights[j] = best_w
                current_ap = best_ap
                trace.append(current_ap)
        if current_ap - round_start_ap < config.tolerance:
            break

    entries = tuple((key, float(w)) for key, w in zip(sorted_keys, weights))
    return FusionModel(
        entries=entries, mode="learn", val_ap_achieved=current_ap, ap_trace=tuple(trace)
    )


def assemble_bank(
    features: Sequence[str],
    mode: str,
    vocab: SubclassVocabulary,
    available: Iterable[str] | None = None,
    include_parent: bool = False,
) -> list[ClassifierKey]:
    """The classifier keys a run trains and fuses.

    mode "none" yields one parent-concept classifier per feature; "avg" and
    "learn" yield one classifier per (feature, subclass) pair, plus the
    parent classifier when ``include_parent`` is set.
    """
    if not features:
        raise ConfigError("feature list is empty")
    if mode not in ("none", "avg", "learn"):
        raise ConfigError(f"subclass mode must be none, avg or learn, got {mode!r}")
    if available is not None:
        known = set(available)
        unknown = [f for f in features if f not in known]
        if unknown:
            raise ConfigError(f"unknown feature names: {unknown}")
    if len(set(features)) != len(features):
        raise ConfigError("duplicate feature names")
    keys: list[ClassifierKey] = []
    for feature in features:
        if mode == "none":
            keys.append(ClassifierKey(feature, PARENT_CLASS))
        else:
            if include_parent:
                keys.append(ClassifierKey(feature, PARENT_CLASS))
            for subclass in vocab.names:
                keys.append(ClassifierKey(feature, subclass))
    return keys


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_fusion(model: FusionModel, path) -> None:
    lines = [f"#mode={model.mode} #val_ap={fmt_float(model.val_ap_achieved)}"]
    for key, weight in model.entries:
        lines.append(f"{key.feature_name}\t{key.class_name}\t{fmt_float(weight)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_fusion(path) -> FusionModel:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        try:
            fields = dict(part.split("=", 1) for part in header.lstrip("#").split(" #"))
            mode = fields["mode"]
            val_ap = float(fields["val_ap"])
        except (KeyError, ValueError):
            raise DataValidationError(f"{path}: malformed fusion header {header!r}") from None
        entries = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataValidationError(f"{path}:{lineno}: expected feature, class, weight")
            entries.append((ClassifierKey(parts[0], parts[1]), float(parts[2])))
    return FusionModel(entries=tuple(entries), mode=mode, val_ap_achieved=val_ap)
