"""Descriptor encodings: bag-of-words histograms, Fisher vectors, pooling.

Local descriptors (MFCC windows, trajectory descriptors) become
fixed-dimension video vectors either by hard assignment against a k-means
codebook or by Fisher-vector encoding against a diagonal-covariance GMM.
Frame-level features become video-level features by average pooling.

Both fitters are deterministic per seed and expose their per-iteration
objective traces, which the invariant tests check directly (SSE
non-increasing for Lloyd's algorithm, log-likelihood non-decreasing for EM).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .corpus import (
    FeatureSpec,
    FeatureTable,
    atomic_write_text,
    fmt_float,
    read_vector_table,
    write_vector_table,
)
from .errors import ConfigError, DataValidationError
from .rng import generator

VARIANCE_FLOOR = 1e-4
DEFAULT_FIT_SAMPLE = 500_000


@dataclass(frozen=True)
class DescriptorSet:
    """Local descriptors for one video (or a pooled training sample):
    an (n, descriptor_dim) matrix."""

    descriptor_dim: int
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=float)
        if vectors.size == 0:
            vectors = vectors.reshape(0, self.descriptor_dim)
        object.__setattr__(self, "vectors", vectors)
        if vectors.ndim != 2 or vectors.shape[1] != self.descriptor_dim:
            raise DataValidationError(
                f"descriptors must be (n, {self.descriptor_dim}), got {vectors.shape}"
            )
        if vectors.size and not np.isfinite(vectors).all():
            raise DataValidationError("non-finite descriptor value")
        vectors.setflags(write=False)

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray = field(repr=False)
    sse_trace: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        centroids = np.asarray(self.centroids, dtype=float)
        object.__setattr__(self, "centroids", centroids)
        if centroids.ndim != 2 or centroids.shape[0] < 1:
            raise DataValidationError("codebook needs at least one centroid")
        if not np.isfinite(centroids).all():
            raise DataValidationError("non-finite centroid")
        centroids.setflags(write=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class GmmModel:
    """Diagonal-covariance mixture; weights sum to one, variances floored."""

    weights: np.ndarray
    means: np.ndarray = field(repr=False)
    variances: np.ndarray = field(repr=False)
    loglik_trace: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        means = np.asarray(self.means, dtype=float)
        variances = np.asarray(self.variances, dtype=float)
        for name, arr in (("weights", weights), ("means", means), ("variances", variances)):
            object.__setattr__(self, name, arr)
            if not np.isfinite(arr).all():
                raise DataValidationError(f"non-finite GMM {name}")
            arr.setflags(write=False)
        if abs(weights.sum() - 1.0) > 1e-9:
            raise DataValidationError(f"GMM weights sum to {weights.sum()}, expected 1")
        if (weights <= 0).any():
            raise DataValidationError("GMM weights must be positive")
        if (variances < VARIANCE_FLOOR * (1 - 1e-12)).any():
            raise DataValidationError("GMM variance below floor")
        if means.shape != variances.shape or means.shape[0] != weights.size:
            raise DataValidationError("GMM parameter shapes disagree")

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_posteriors(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(log responsibilities (n, k), per-point log-likelihood (n,))."""
        # log N(x | mu_k, diag sigma2_k), all components at once
        diff = x[:, None, :] - self.means[None, :, :]
        log_norm = -0.5 * (np.log(2 * np.pi * self.variances).sum(axis=1))
        log_prob = log_norm[None, :] - 0.5 * (diff**2 / self.variances[None, :, :]).sum(axis=2)
        weighted = log_prob + np.log(self.weights)[None, :]
        total = logsumexp(weighted, axis=1)
        return weighted - total[:, None], total


def load_descriptors(path) -> dict[str, DescriptorSet]:
    """Read a descriptor file (unit keys ``videoid:descindex``) into one
    DescriptorSet per video, rows ordered by descriptor index."""
    dim, raw_keys, values = read_vector_table(path)
    per_video: dict[str, list[tuple[int, int]]] = {}
    for row, raw in enumerate(raw_keys):
        vid, sep, idx = raw.rpartition(":")
        if not sep or not vid:
            raise DataValidationError(f"{path}: descriptor key {raw!r} is not videoid:descindex")
        try:
            per_video.setdefault(vid, []).append((int(idx), row))
        except ValueError:
            raise DataValidationError(f"{path}: descriptor index in {raw!r} is not an integer") from None
    out = {}
    for vid, pairs in per_video.items():
        pairs.sort()
        out[vid] = DescriptorSet(dim, values[[row for _, row in pairs]])
    return out


def write_descriptors(per_video: dict[str, DescriptorSet], dim: int, path) -> None:
    keys: list[tuple[str, int]] = []
    rows = []
    for vid in sorted(per_video):
        dset = per_video[vid]
        if dset.descriptor_dim != dim:
            raise DataValidationError(f"video {vid!r}: descriptor dim {dset.descriptor_dim} != {dim}")
        for i, vec in enumerate(dset.vectors):
            keys.append((vid, i))
            rows.append(vec)
    values = np.vstack(rows) if rows else np.empty((0, dim))
    write_vector_table(keys, values, path)


def pool_training_sample(per_video: dict[str, DescriptorSet], dim: int) -> DescriptorSet:
    """Stack every video's descriptors into one training sample
    (deterministic: videos in sorted order)."""
    stacks = [per_video[vid].vectors for vid in sorted(per_video) if len(per_video[vid])]
    if not stacks:
        return DescriptorSet(dim, np.empty((0, dim)))
    return DescriptorSet(dim, np.vstack(stacks))


def subsample_descriptors(descriptors: DescriptorSet, limit: int, seed: int) -> DescriptorSet:
    """Seeded uniform subsample used to bound codebook/GMM fitting cost."""
    n = len(descriptors)
    if n <= limit:
        return descriptors
    rng = generator(seed, "subsample")
    idx = np.sort(rng.choice(n, size=limit, replace=False))
    return DescriptorSet(descriptors.descriptor_dim, descriptors.vectors[idx])


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    first = rng.integers(n)
    centroids[0] = x[first]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with chosen centroids
            centroids[j] = x[rng.integers(n)]
            continue
        probs = d2 / total
        choice = rng.choice(n, p=probs)
        centroids[j] = x[choice]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def fit_codebook(
    training_descriptors: DescriptorSet,
    k: int,
    seed: int,
    max_iter: int = 100,
    tol: float = 1e-6,
    sample_limit: int = DEFAULT_FIT_SAMPLE,
) -> Codebook:
    """Lloyd's k-means with seeded k-means++ initialization.

    Runs until the largest centroid shift drops below ``tol`` or
    ``max_iter`` iterations.  The within-cluster SSE after each assignment
    step is recorded in ``sse_trace``.
    """
    sample = subsample_descriptors(training_descriptors, sample_limit, seed)
    x = sample.vectors
    if len(np.unique(x, axis=0)) < k:
        raise DataValidationError(f"need at least {k} distinct descriptors, got fewer")
    rng = generator(seed, "kmeans")
    centroids = _kmeans_pp_init(x, k, rng)
    sse_trace = []
    for _ in range(max_iter):
        d2 = cdist(x, centroids, metric="sqeuclidean")
        assign = d2.argmin(axis=1)
        sse_trace.append(float(d2[np.arange(x.shape[0]), assign].sum()))
        new_centroids = centroids.copy()
        for j in range(k):
            members = x[assign == j]
            if members.shape[0]:
                new_centroids[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its centroid
                worst = d2[np.arange(x.shape[0]), assign].argmax()
                new_centroids[j] = x[worst]
        shift = np.abs(new_centroids - centroids).max()
        centroids = new_centroids
        if shift < tol:
            break
    d2 = cdist(x, centroids, metric="sqeuclidean")
    assign = d2.argmin(axis=1)
    sse_trace.append(float(d2[np.arange(x.shape[0]), assign].sum()))
    return Codebook(centroids=centroids, sse_trace=tuple(sse_trace))


def encode_bow(descriptors: DescriptorSet, codebook: Codebook) -> np.ndarray:
    """Histogram of nearest-centroid assignments, L1-normalized to sum one.
    An empty descriptor set encodes to the zero vector."""
    if descriptors.descriptor_dim != codebook.dim:
        raise DataValidationError(
            f"descriptor dim {descriptors.descriptor_dim} != codebook dim {codebook.dim}"
        )
    hist = np.zeros(codebook.k)
    if len(descriptors) == 0:
        return hist
    assign = cdist(descriptors.vectors, codebook.centroids, metric="sqeuclidean").argmin(axis=1)
    np.add.at(hist, assign, 1.0)
    return hist / hist.sum()


# ---------------------------------------------------------------------------
# GMM / Fisher vector
# ---------------------------------------------------------------------------


def fit_gmm(
    training_descriptors: DescriptorSet,
    k: int,
    seed: int,
    max_iter: int = 100,
    tol: float = 1e-6,
    sample_limit: int = DEFAULT_FIT_SAMPLE,
) -> GmmModel:
    """Diagonal-covariance EM, initialized from the k-means codebook.

    Stops when the mean log-likelihood improves by less than ``tol`` or
    after ``max_iter`` iterations.  The variance floor is applied at every
    M-step; the per-iteration mean log-likelihood lands in
    ``loglik_trace``.
    """
    sample = subsample_descriptors(training_descriptors, sample_limit, seed)
    x = sample.vectors
    n, dim = x.shape
    codebook = fit_codebook(sample, k, seed, sample_limit=sample_limit)
    d2 = cdist(x, codebook.centroids, metric="sqeuclidean")
    assign = d2.argmin(axis=1)
    weights = np.maximum(np.bincount(assign, minlength=k).astype(float), 1.0)
    weights /= weights.sum()
    means = codebook.centroids.copy()
    variances = np.empty((k, dim))
    global_var = np.maximum(x.var(axis=0), VARIANCE_FLOOR)
    for j in range(k):
        members = x[assign == j]
        if members.shape[0] >= 2:
            variances[j] = np.maximum(members.var(axis=0), VARIANCE_FLOOR)
        else:
            variances[j] = global_var
    model = GmmModel(weights=weights, means=means, variances=variances)

    trace = []
    for _ in range(max_iter):
        log_resp, log_prob = model.log_posteriors(x)
        trace.append(float(log_prob.mean()))
        resp = np.exp(log_resp)
        s0 = resp.sum(axis=0)  # (k,)
        s1 = resp.T @ x  # (k, dim)
        s2 = resp.T @ (x**2)
        weights = s0 / n
        # guard collapsed components: keep a tiny positive mass
        weights = np.maximum(weights, 1e-12)
        weights /= weights.sum()
        safe_s0 = np.maximum(s0, 1e-12)[:, None]
        means = s1 / safe_s0
        variances = np.maximum(s2 / safe_s0 - means**2, VARIANCE_FLOOR)
        model = GmmModel(weights=weights, means=means, variances=variances)
        if len(trace) >= 2 and trace[-1] - trace[-2] < tol:
            break
    _, log_prob = model.log_posteriors(x)
    trace.append(float(log_prob.mean()))
    return GmmModel(
        weights=model.weights,
        means=model.means,
        variances=model.variances,
        loglik_trace=tuple(trace),
    )


def encode_fv(descriptors: DescriptorSet, gmm: GmmModel, normalize: bool = True) -> np.ndarray:
    """Fisher vector of the descriptors under the GMM.

    Gradients with respect to component means and standard deviations only,
    so the output length is 2 * K * descriptor_dim.  With ``normalize``
    (the default) the vector receives signed square-root then L2
    normalization.  An empty descriptor set encodes to the zero vector.
    """
    if descriptors.descriptor_dim != gmm.dim:
        raise DataValidationError(f"descriptor dim {descriptors.descriptor_dim} != GMM dim {gmm.dim}")
    k, dim = gmm.k, gmm.dim
    out_dim = 2 * k * dim
    x = descriptors.vectors
    n = x.shape[0]
    if n == 0:
        return np.zeros(out_dim)
    log_resp, _ = gmm.log_posteriors(x)
    resp = np.exp(log_resp)
    s0 = resp.sum(axis=0)[:, None]  # (k, 1)
    s1 = resp.T @ x  # (k, dim)
    s2 = resp.T @ (x**2)
    sigma = np.sqrt(gmm.variances)
    w = gmm.weights[:, None]
    g_mean = (s1 - gmm.means * s0) / (np.sqrt(w) * sigma) / n
    g_sigma = (s2 - 2 * gmm.means * s1 + (gmm.means**2 - gmm.variances) * s0) / (
        np.sqrt(2 * w) * gmm.variances
    ) / n
    fv = np.concatenate([g_mean.ravel(), g_sigma.ravel()])
    if not normalize:
        return fv
    fv = np.sign(fv) * np.sqrt(np.abs(fv))
    norm = np.sqrt(fv @ fv)
    if norm > 0:
        fv /= norm
    return fv


# ---------------------------------------------------------------------------
# Pooling and dimension bookkeeping
# ---------------------------------------------------------------------------


def avg_pool(frame_table: FeatureTable, video_spec: FeatureSpec | None = None) -> FeatureTable:
    """Arithmetic mean of each video's frame vectors; dim is preserved."""
    if frame_table.spec.level != "frame":
        raise ConfigError(f"feature {frame_table.spec.name!r} is not frame level")
    if len(frame_table) == 0:
        raise DataValidationError(f"feature {frame_table.spec.name!r}: no frames to pool")
    if video_spec is None:
        src = frame_table.spec
        video_spec = FeatureSpec(
            name=f"{src.name}_pooled",
            modality=src.modality,
            level="video",
            dim=src.dim,
            encoding="avgpool",
        )
    if video_spec.dim != frame_table.spec.dim:
        raise DataValidationError("pooled spec dim must match the frame spec dim")
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for key, row in zip(frame_table.keys, frame_table.values):
        vid = key[0]
        if vid in sums:
            sums[vid] = sums[vid] + row
            counts[vid] += 1
        else:
            sums[vid] = row.copy()
            counts[vid] = 1
    vids = sorted(sums)
    values = np.vstack([sums[v] / counts[v] for v in vids])
    return FeatureTable(spec=video_spec, keys=tuple(vids), values=values)


def validate_dims(spec: FeatureSpec, k: int, descriptor_dim: int | None = None) -> None:
    """Check that a feature's published dim matches its encoder parameters:
    dim == K for bag-of-words, dim == 2 * K * descriptor_dim for Fisher
    vectors."""
    if spec.encoding == "bow":
        if spec.dim != k:
            raise DataValidationError(
                f"feature {spec.name!r}: bow dim {spec.dim} != codebook size {k}"
            )
    elif spec.encoding == "fv":
        if descriptor_dim is None:
            raise ConfigError("descriptor_dim is required to validate an fv feature")
        expect = 2 * k * descriptor_dim
        if spec.dim != expect:
            raise DataValidationError(
                f"feature {spec.name!r}: fv dim {spec.dim} != 2*{k}*{descriptor_dim} = {expect}"
            )
    else:
        raise ConfigError(f"feature {spec.name!r} has no codebook/GMM to validate")


# ---------------------------------------------------------------------------
# Codebook / GMM persistence
# ---------------------------------------------------------------------------


def save_codebook(codebook: Codebook, path) -> None:
    lines = [f"#type=kmeans #K={codebook.k} #dim={codebook.dim}"]
    for row in codebook.centroids:
        lines.append(" ".join(fmt_float(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def save_gmm(gmm: GmmModel, path) -> None:
    lines = [f"#type=gmm #K={gmm.k} #dim={gmm.dim}"]
    for j in range(gmm.k):
        parts = [fmt_float(gmm.weights[j])]
        parts += [fmt_float(v) for v in gmm.means[j]]
        parts += [fmt_float(v) for v in gmm.variances[j]]
        lines.append(" ".join(parts))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _parse_model_header(line: str, path) -> tuple[str, int, int]:
    try:
        fields = dict(part.split("=", 1) for part in line.lstrip("#").split(" #"))
        return fields["type"], int(fields["K"]), int(fields["dim"])
    except (KeyError, ValueError):
        raise DataValidationError(f"{path}: malformed codebook/GMM header {line!r}") from None


def load_codebook(path):
    """Load a persisted k-means codebook or GMM, depending on the header."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        kind, k, dim = _parse_model_header(fh.readline().strip(), path)
        rows = [np.array(line.split(" "), dtype=float) for line in fh if line.strip()]
    if len(rows) != k:
        raise DataValidationError(f"{path}: expected {k} components, found {len(rows)}")
    mat = np.vstack(rows)
    if kind == "kmeans":
        if mat.shape[1] != dim:
            raise DataValidationError(f"{path}: centroid dim {mat.shape[1]} != header dim {dim}")
        return Codebook(centroids=mat)
    if kind == "gmm":
        if mat.shape[1] != 1 + 2 * dim:
            raise DataValidationError(f"{path}: GMM rows must hold weight, {dim} means, {dim} variances")
        return GmmModel(weights=mat[:, 0], means=mat[:, 1 : 1 + dim], variances=mat[:, 1 + dim :])
    raise DataValidationError(f"{path}: unknown model type {kind!r}")
