"""Binary linear classifiers and the hard-negative bootstrap ensemble.

One ensemble is trained per (feature, class) pair, where the class is
either the parent concept ("violence") or one subclass.  Training data are
heavily imbalanced, so instead of using all negatives at once, the
bootstrap loop repeatedly samples a pool of candidate negatives, keeps the
ones the current ensemble scores highest (the hardest), trains a fresh
linear model on positives plus those negatives, and averages all members'
scores.

The base trainer performs deterministic full-batch subgradient descent on
the L2-regularized hinge loss with step 1/(lambda * epoch) and a
step-halving safeguard, so the objective is non-increasing across epochs
and the learned model is invariant to duplicating the training set (the
subgradient is an average).  Per-sample stochastic updates would satisfy
neither property.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import atomic_write_text, fmt_float
from .errors import ConfigError, DataValidationError, DegenerateLabelsError
from .metrics import ap_from_scores
from .rng import generator

MAX_STEP_HALVINGS = 60


@dataclass(frozen=True)
class ClassifierKey:
    """Identity of one base classifier: which feature, which class."""

    feature_name: str
    class_name: str  # "violence" or a subclass name

    def __str__(self) -> str:
        return f"{self.feature_name}/{self.class_name}"

    def sort_key(self) -> tuple[str, str]:
        return (self.feature_name, self.class_name)


@dataclass(frozen=True)
class LinearModel:
    """w . x + b scorer; ``objectives`` holds the per-epoch training
    objective (regularized mean hinge), starting from the zero model."""

    w: np.ndarray = field(repr=False)
    b: float
    objectives: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "w", w)
        if w.ndim != 1 or not np.isfinite(w).all() or not np.isfinite(self.b):
            raise DataValidationError("linear model parameters must be finite 1-D")
        w.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.w.size

    def decision(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DataValidationError(f"input dim {x.shape[-1]} != model dim {self.dim}")
        return x @ self.w + self.b


@dataclass(frozen=True)
class BootstrapIteration:
    """Scores from one selection round, kept for diagnostics: ``selected``
    are the negatives that entered training, ``rejected`` the sampled ones
    that did not.  Both are None at iteration 1 (random selection)."""

    selected: np.ndarray | None
    rejected: np.ndarray | None
    lam: float


@dataclass(frozen=True)
class EnsembleModel:
    """Averaged bank of linear models; the ensemble score of x is the
    arithmetic mean of the member scores."""

    key: ClassifierKey
    members: tuple[LinearModel, ...]
    trace: tuple[BootstrapIteration, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if not self.members:
            raise DataValidationError("ensemble needs at least one member")
        dims = {m.dim for m in self.members}
        if len(dims) != 1:
            raise DataValidationError(f"ensemble members disagree on dim: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.members[0].dim

    def score(self, x: np.ndarray) -> np.ndarray:
        """Mean member decision value for one vector or a stack of vectors."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        mat = np.atleast_2d(x)
        if mat.shape[1] != self.dim:
            raise DataValidationError(f"input dim {mat.shape[1]} != ensemble dim {self.dim}")
        w = np.stack([m.w for m in self.members])
        b = np.array([m.b for m in self.members])
        scores = (mat @ w.T + b).mean(axis=1)
        return float(scores[0]) if single else scores


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the bootstrap loop.  pool_size / selected_per_iter default
    to 10x and 1x the positive count (pool at least 100)."""

    iterations: int = 10
    pool_size: int | None = None
    selected_per_iter: int | None = None
    lambda_grid: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1)
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.lambda_grid or any(l <= 0 for l in self.lambda_grid):
            raise ConfigError("lambda_grid must be nonempty and positive")
        for name in ("pool_size", "selected_per_iter"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be positive")

    def resolved(self, num_positives: int) -> tuple[int, int]:
        """(pool sample size B, negatives selected per iteration n)."""
        n = self.selected_per_iter or num_positives
        b = self.pool_size or max(100, 10 * num_positives)
        return max(b, n), n


def hinge_objective(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, lam: float) -> float:
    """lam/2 * ||w||^2 + mean hinge loss (bias unregularized)."""
    margins = y * (x @ w + b)
    return float(0.5 * lam * (w @ w) + np.maximum(0.0, 1.0 - margins).mean())


def train_linear(
    positives: np.ndarray,
    negatives: np.ndarray,
    lam: float,
    epochs: int = 20,
    seed: int = 0,
) -> LinearModel:
    """Fit w, b by subgradient descent on the regularized hinge objective.

    Each epoch takes one averaged-subgradient step of size 1/(lam * epoch);
    if the step would increase the objective it is halved until it does
    not, so the recorded objective sequence never rises.
    """
    del seed  # the path is fully deterministic; accepted for interface stability
    positives = np.atleast_2d(np.asarray(positives, dtype=float))
    negatives = np.atleast_2d(np.asarray(negatives, dtype=float))
    if positives.shape[0] == 0 or negatives.shape[0] == 0:
        raise DegenerateLabelsError("need at least one positive and one negative example")
    if positives.shape[1] != negatives.shape[1]:
        raise DataValidationError("positive/negative feature dims differ")
    if lam <= 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    x = np.vstack([positives, negatives])
    if not np.isfinite(x).all():
        raise DataValidationError("non-finite training vector")
    y = np.concatenate([np.ones(positives.shape[0]), -np.ones(negatives.shape[0])])
    m, dim = x.shape

    w = np.zeros(dim)
    b = 0.0
    objectives = [hinge_objective(w, b, x, y, lam)]
    for epoch in range(1, epochs + 1):
        margins = y * (x @ w + b)
        viol = margins < 1.0
        g_w = lam * w - (y[viol] @ x[viol]) / m
        g_b = -y[viol].sum() / m
        step = 1.0 / (lam * epoch)
        for _ in range(MAX_STEP_HALVINGS):
            w_new = w - step * g_w
            b_new = b - step * g_b
            if hinge_objective(w_new, b_new, x, y, lam) <= objectives[-1]:
                w, b = w_new, b_new
                break
            step *= 0.5
        # if no step length helped, the point is kept and the objective stays flat
        objectives.append(hinge_objective(w, b, x, y, lam))
    return LinearModel(w=w, b=b, objectives=tuple(objectives))


def _select_lambda(
    positives: np.ndarray,
    negatives: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
) -> float:
    """Pick lambda by AP on a held-out 20% fold; falls back to the first
    grid value when the data are too small to hold anything out."""
    n_pos, n_neg = positives.shape[0], negatives.shape[0]
    hold_pos = round(0.2 * n_pos) if n_pos >= 5 else (1 if n_pos >= 2 else 0)
    hold_neg = round(0.2 * n_neg) if n_neg >= 5 else (1 if n_neg >= 2 else 0)
    if hold_pos == 0 or hold_neg == 0:
        return config.lambda_grid[0]
    pos_perm = rng.permutation(n_pos)
    neg_perm = rng.permutation(n_neg)
    tr_pos, ho_pos = positives[pos_perm[hold_pos:]], positives[pos_perm[:hold_pos]]
    tr_neg, ho_neg = negatives[neg_perm[hold_neg:]], negatives[neg_perm[:hold_neg]]
    held = np.vstack([ho_pos, ho_neg])
    held_rel = np.concatenate([np.ones(hold_pos, bool), np.zeros(hold_neg, bool)])
    best_lam, best_ap = None, -1.0
    for lam in config.lambda_grid:
        model = train_linear(tr_pos, tr_neg, lam, config.epochs)
        ap = ap_from_scores(model.decision(held), held_rel)
        if ap > best_ap:
            best_lam, best_ap = lam, ap
    return best_lam


def negative_bootstrap(
    positives: np.ndarray,
    negative_pool: np.ndarray,
    key: ClassifierKey,
    config: TrainConfig,
) -> EnsembleModel:
    """Iterative hard-negative training.

    Iteration 1 trains on a random draw from the pool.  Every later
    iteration scores a fresh random sample of pool negatives with the
    current ensemble and keeps the highest scoring ones for training, so
    each new member concentrates on what the ensemble still confuses with
    positives.
    """
    positives = np.atleast_2d(np.asarray(positives, dtype=float))
    negative_pool = np.atleast_2d(np.asarray(negative_pool, dtype=float))
    if positives.shape[0] == 0:
        raise DegenerateLabelsError(f"{key}: no positive examples")
    b_size, n_select = config.resolved(positives.shape[0])
    if negative_pool.shape[0] < n_select:
        raise DataValidationError(
            f"{key}: negative pool ({negative_pool.shape[0]}) smaller than selection size ({n_select})"
        )
    members: list[LinearModel] = []
    trace: list[BootstrapIteration] = []
    for t in range(1, config.iterations + 1):
        rng = generator(config.seed, "bootstrap", key.feature_name, key.class_name, t)
        if t == 1:
            chosen = rng.choice(negative_pool.shape[0], size=n_select, replace=False)
            selected = negative_pool[chosen]
            record_sel = record_rej = None
        else:
            sample_size = min(b_size, negative_pool.shape[0])
            candidates = rng.choice(negative_pool.shape[0], size=sample_size, replace=False)
            ensemble = EnsembleModel(key=key, members=tuple(members))
            cand_scores = ensemble.score(negative_pool[candidates])
            order = np.argsort(-cand_scores, kind="stable")
            hard = order[:n_select]
            selected = negative_pool[candidates[hard]]
            record_sel = cand_scores[hard]
            record_rej = cand_scores[order[n_select:]]
        lam = _select_lambda(positives, selected, config, rng)
        model = train_linear(positives, selected, lam, config.epochs)
        members.append(model)
        trace.append(BootstrapIteration(selected=record_sel, rejected=record_rej, lam=lam))
    return EnsembleModel(key=key, members=tuple(members), trace=tuple(trace))


def score(model: EnsembleModel, x: np.ndarray):
    """Ensemble score: mean of member decision values."""
    return model.score(x)


def normalize_scores(
    val_scores: np.ndarray, other_scores: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """z-score both arrays using mean/std estimated on the val set only.

    Constant val scores fall back to dividing by one, so the output is all
    zeros rather than NaN.  The transform is strictly monotone, hence
    ranking metrics of a single classifier are unchanged by it.
    """
    val_scores = np.asarray(val_scores, dtype=float)
    other_scores = np.asarray(other_scores, dtype=float)
    mean = val_scores.mean()
    std = val_scores.std()
    if std == 0.0:
        std = 1.0
    return (val_scores - mean) / std, (other_scores - mean) / std


# ---------------------------------------------------------------------------
# Model persistence
# ---------------------------------------------------------------------------


def save_model(model: EnsembleModel, path) -> None:
    lines = [
        f"#feature={model.key.feature_name} #class={model.key.class_name}"
        f" #members={len(model.members)} #dim={model.dim}"
    ]
    for member in model.members:
        parts = [fmt_float(member.b)] + [fmt_float(v) for v in member.w]
        lines.append(" ".join(parts))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_model(path) -> EnsembleModel:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        try:
            fields = dict(part.split("=", 1) for part in header.lstrip("#").split(" #"))
            key = ClassifierKey(feature_name=fields["feature"], class_name=fields["class"])
            n_members, dim = int(fields["members"]), int(fields["dim"])
        except (KeyError, ValueError):
            raise DataValidationError(f"{path}: malformed model header {header!r}") from None
        members = []
        for line in fh:
            if not line.strip():
                continue
            row = np.array(line.split(" "), dtype=float)
            if row.size != dim + 1:
                raise DataValidationError(f"{path}: member row has {row.size} values, expected {dim + 1}")
            members.append(LinearModel(w=row[1:], b=float(row[0])))
    if len(members) != n_members:
        raise DataValidationError(f"{path}: expected {n_members} members, found {len(members)}")
    return EnsembleModel(key=key, members=tuple(members))
