"""Data model and file ingestion for video corpora.

A corpus directory looks like::

    corpus/
      manifest.json        feature specs and, for synthetic corpora, the
                           generator constants (ground-truth mixtures)
      videos.tsv           video_id  movie_id  dev|test  t1,t2,...
      annotations.tsv      video_id  0|1  comma-separated subclass names
      split.tsv            video_id  train|val          (dev videos only)
      features/<name>.tsv  one table per feature
      descriptors/<name>.tsv

Feature tables are UTF-8 text: line 1 is ``#dim=<D>``, then one row per
line ``unit_key<TAB>v1 v2 ... vD``.  Floats are written with 17 significant
digits so that load followed by write reproduces a canonical file byte for
byte.  Frame-level unit keys are ``videoid:frameindex``.

All types are immutable after construction and safe to share across
workers.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataValidationError, DegenerateLabelsError
from .rng import generator


def fmt_float(v: float) -> str:
    """Canonical float formatting used by every writer in the package."""
    return format(float(v), ".17g")


def atomic_write_text(path, text: str) -> None:
    """Write text to path via a temp file + rename, so readers never see
    a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VideoRecord:
    """One clip: identity, provenance, split membership and frame times."""

    id: str
    movie_id: str
    split: str  # "dev" | "test"
    frame_times: tuple[float, ...] = ()

    def __post_init__(self):
        if self.split not in ("dev", "test"):
            raise DataValidationError(f"video {self.id!r}: split must be dev or test, got {self.split!r}")
        times = self.frame_times
        if any(t < 0 for t in times):
            raise DataValidationError(f"video {self.id!r}: negative frame time")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DataValidationError(f"video {self.id!r}: frame times must be strictly increasing")


@dataclass(frozen=True)
class SubclassVocabulary:
    """Ordered, distinct subclass names.  The order fixes every index used
    downstream (occurrence vectors, co-occurrence matrices, classifier banks)."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise DataValidationError("subclass names must be distinct")
        for name in self.names:
            if not name or "," in name or "\t" in name or "\n" in name:
                raise DataValidationError(f"bad subclass name {name!r}")

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def __iter__(self):
        return iter(self.names)

    def __len__(self):
        return len(self.names)


@dataclass(frozen=True)
class LabelStore:
    """Per-video violence flag plus subclass sets.

    Subclasses annotate violence videos only: a nonempty subclass set on a
    non-violent video is rejected.
    """

    violence: Mapping[str, bool]
    subclasses: Mapping[str, frozenset[str]]

    def __post_init__(self):
        for vid, subs in self.subclasses.items():
            if subs and not self.violence.get(vid, False):
                raise DataValidationError(f"video {vid!r} has subclasses but is not marked violent")

    def is_violent(self, vid: str) -> bool:
        if vid not in self.violence:
            raise DataValidationError(f"video {vid!r} has no label")
        return self.violence[vid]

    def subclass_set(self, vid: str) -> frozenset[str]:
        return self.subclasses.get(vid, frozenset())

    def ids(self) -> tuple[str, ...]:
        return tuple(self.violence)


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    modality: str  # image | audio | motion
    level: str  # frame | video
    dim: int
    encoding: str  # raw | bow | fv | avgpool

    def __post_init__(self):
        if self.modality not in ("image", "audio", "motion"):
            raise ConfigError(f"feature {self.name!r}: unknown modality {self.modality!r}")
        if self.level not in ("frame", "video"):
            raise ConfigError(f"feature {self.name!r}: unknown level {self.level!r}")
        if self.encoding not in ("raw", "bow", "fv", "avgpool"):
            raise ConfigError(f"feature {self.name!r}: unknown encoding {self.encoding!r}")
        if self.dim < 1:
            raise ConfigError(f"feature {self.name!r}: dim must be positive")


@dataclass(frozen=True)
class FeatureTable:
    """Dense vectors keyed by video id (video level) or (video id, frame
    index) pairs (frame level).  Values are one float64 matrix; ``keys``
    gives the row order."""

    spec: FeatureSpec
    keys: tuple
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != len(self.keys):
            raise DataValidationError(f"feature {self.spec.name!r}: key/row count mismatch")
        if self.values.shape[1] != self.spec.dim:
            raise DataValidationError(
                f"feature {self.spec.name!r}: rows have dim {self.values.shape[1]}, spec says {self.spec.dim}"
            )
        if not np.isfinite(self.values).all():
            raise DataValidationError(f"feature {self.spec.name!r}: non-finite value")
        if len(set(self.keys)) != len(self.keys):
            raise DataValidationError(f"feature {self.spec.name!r}: duplicate unit key")
        self.values.setflags(write=False)

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def index(self) -> dict:
        # built lazily; frozen dataclass, so cache via __dict__
        cached = self.__dict__.get("_index")
        if cached is None:
            cached = {k: i for i, k in enumerate(self.keys)}
            self.__dict__["_index"] = cached
        return cached

    def vector(self, key) -> np.ndarray:
        return self.values[self.index[key]]

    def video_ids(self) -> tuple[str, ...]:
        """Distinct video ids in first-appearance order."""
        seen: dict[str, None] = {}
        for k in self.keys:
            vid = k[0] if isinstance(k, tuple) else k
            seen.setdefault(vid, None)
        return tuple(seen)

    def frames_of(self, vid: str) -> tuple[int, ...]:
        """Frame indices present for one video, ascending (frame level only)."""
        if self.spec.level != "frame":
            raise ConfigError(f"feature {self.spec.name!r} is video level")
        return tuple(sorted(k[1] for k in self.keys if isinstance(k, tuple) and k[0] == vid))

    def rows_for_videos(self, vids: Iterable[str]) -> np.ndarray:
        """Stack of all rows belonging to the given videos (any level),
        in table order."""
        wanted = set(vids)
        sel = [i for i, k in enumerate(self.keys) if (k[0] if isinstance(k, tuple) else k) in wanted]
        return self.values[sel]


@dataclass(frozen=True)
class SplitAssignment:
    """Train/val partition of the dev set."""

    train_ids: frozenset[str]
    val_ids: frozenset[str]
    seed: int

    def __post_init__(self):
        if self.train_ids & self.val_ids:
            raise DataValidationError("train and val sets overlap")


# ---------------------------------------------------------------------------
# Built-in feature presets
# ---------------------------------------------------------------------------

# The fourteen standard features; dims are the published table values.
# BoW dims equal the codebook size; FV dims equal 2 * K * descriptor_dim
# with K = 256.
BUILTIN_FEATURES: dict[str, FeatureSpec] = {
    spec.name: spec
    for spec in [
        FeatureSpec("vnet_f", "image", "frame", 4096, "raw"),
        FeatureSpec("vnet_v", "image", "video", 4096, "avgpool"),
        FeatureSpec("gnet_f", "image", "frame", 1024, "raw"),
        FeatureSpec("gnet_v", "image", "video", 1024, "avgpool"),
        FeatureSpec("g4k_f", "image", "frame", 1024, "raw"),
        FeatureSpec("g4k_v", "image", "video", 1024, "avgpool"),
        FeatureSpec("mfcc_b", "audio", "video", 4096, "bow"),
        FeatureSpec("mfcc_fv", "audio", "video", 19968, "fv"),
        FeatureSpec("mbh_b", "motion", "video", 4000, "bow"),
        FeatureSpec("mbh_fv", "motion", "video", 98304, "fv"),
        FeatureSpec("hog_b", "motion", "video", 4000, "bow"),
        FeatureSpec("hog_fv", "motion", "video", 49152, "fv"),
        FeatureSpec("hof_b", "motion", "video", 4000, "bow"),
        FeatureSpec("hof_fv", "motion", "video", 55296, "fv"),
    ]
}

# Descriptor dimensionality behind each FV feature (before encoding).
FV_DESCRIPTOR_DIMS = {"mfcc_fv": 39, "mbh_fv": 192, "hog_fv": 96, "hof_fv": 108}
FV_COMPONENTS = 256
BOW_CODEBOOK_SIZES = {"mfcc_b": 4096, "mbh_b": 4000, "hog_b": 4000, "hof_b": 4000}


# ---------------------------------------------------------------------------
# Feature table IO
# ---------------------------------------------------------------------------


def _parse_unit_key(raw: str, level: str):
    if level == "video":
        return raw
    vid, sep, idx = raw.rpartition(":")
    if not sep or not vid:
        raise DataValidationError(f"frame-level unit key {raw!r} is not videoid:frameindex")
    try:
        return (vid, int(idx))
    except ValueError:
        raise DataValidationError(f"frame index in unit key {raw!r} is not an integer") from None


def _format_unit_key(key) -> str:
    if isinstance(key, tuple):
        return f"{key[0]}:{key[1]}"
    return key


def read_vector_table(path) -> tuple[int, list[str], np.ndarray]:
    """Low-level reader for the ``#dim=`` TSV scheme: returns the declared
    dimension, the raw unit-key strings and the value matrix."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("#dim="):
            raise DataValidationError(f"{path}: missing #dim header")
        dim = int(header[len("#dim=") :])
        raw_keys: list[str] = []
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            raw_key, sep, raw_vals = line.partition("\t")
            if not sep:
                raise DataValidationError(f"{path}:{lineno}: missing tab after unit key")
            try:
                vec = np.array(raw_vals.split(" "), dtype=float)
            except ValueError:
                raise DataValidationError(f"{path}:{lineno}: unparseable value") from None
            if vec.size != dim:
                raise DataValidationError(f"{path}:{lineno}: row has {vec.size} values, expected {dim}")
            if not np.isfinite(vec).all():
                raise DataValidationError(f"{path}:{lineno}: non-finite value")
            raw_keys.append(raw_key)
            rows.append(vec)
    if len(set(raw_keys)) != len(raw_keys):
        raise DataValidationError(f"{path}: duplicate unit key")
    values = np.vstack(rows) if rows else np.empty((0, dim))
    return dim, raw_keys, values


def write_vector_table(keys, values: np.ndarray, path) -> None:
    """Low-level writer: header, then rows sorted by unit key; floats at 17
    significant digits so a canonical file survives load + write byte for
    byte."""
    order = sorted(range(len(keys)), key=lambda i: keys[i])
    lines = [f"#dim={values.shape[1]}"]
    for i in order:
        vals = " ".join(fmt_float(v) for v in values[i])
        lines.append(f"{_format_unit_key(keys[i])}\t{vals}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_features(path, spec: FeatureSpec) -> FeatureTable:
    """Parse a feature file and validate it against the spec.

    Rejects dimension mismatches (wrong file for the spec), non-finite
    values (corrupt file) and duplicate unit keys.
    """
    dim, raw_keys, values = read_vector_table(path)
    if dim != spec.dim:
        raise DataValidationError(
            f"{path}: file declares dim={dim} but spec {spec.name!r} requires dim={spec.dim}"
        )
    keys = [_parse_unit_key(raw, spec.level) for raw in raw_keys]
    if len(set(keys)) != len(keys):
        raise DataValidationError(f"{path}: duplicate unit key")
    return FeatureTable(spec=spec, keys=tuple(keys), values=values)


def write_features(table: FeatureTable, path) -> None:
    """Emit the canonical form: header, then rows sorted by unit key."""
    write_vector_table(table.keys, table.values, path)


# ---------------------------------------------------------------------------
# Annotation / split / video-record IO
# ---------------------------------------------------------------------------


def load_annotations(path) -> LabelStore:
    violence: dict[str, bool] = {}
    subclasses: dict[str, frozenset[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataValidationError(f"{path}:{lineno}: expected 3 tab-separated columns")
            vid, flag, subs = parts
            if vid in violence:
                raise DataValidationError(f"{path}:{lineno}: duplicate video id {vid!r}")
            if flag not in ("0", "1"):
                raise DataValidationError(f"{path}:{lineno}: violence flag must be 0 or 1")
            violence[vid] = flag == "1"
            names = frozenset(s for s in subs.split(",") if s)
            if names:
                subclasses[vid] = names
    return LabelStore(violence=violence, subclasses=subclasses)


def write_annotations(labels: LabelStore, path) -> None:
    lines = []
    for vid in sorted(labels.violence):
        subs = ",".join(sorted(labels.subclass_set(vid)))
        lines.append(f"{vid}\t{1 if labels.violence[vid] else 0}\t{subs}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_split(path) -> SplitAssignment:
    train, val = set(), set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            vid, sep, part = line.partition("\t")
            if part == "train":
                train.add(vid)
            elif part == "val":
                val.add(vid)
            else:
                raise DataValidationError(f"{path}:{lineno}: expected train or val")
    return SplitAssignment(train_ids=frozenset(train), val_ids=frozenset(val), seed=-1)


def write_split(split: SplitAssignment, path) -> None:
    lines = [f"{vid}\ttrain" for vid in sorted(split.train_ids)]
    lines += [f"{vid}\tval" for vid in sorted(split.val_ids)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_videos(path) -> dict[str, VideoRecord]:
    videos: dict[str, VideoRecord] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataValidationError(f"{path}:{lineno}: expected 4 tab-separated columns")
            vid, movie, split, times = parts
            if vid in videos:
                raise DataValidationError(f"{path}:{lineno}: duplicate video id {vid!r}")
            frame_times = tuple(float(t) for t in times.split(",") if t)
            videos[vid] = VideoRecord(id=vid, movie_id=movie, split=split, frame_times=frame_times)
    return videos


def write_videos(videos: Mapping[str, VideoRecord], path) -> None:
    lines = []
    for vid in sorted(videos):
        rec = videos[vid]
        times = ",".join(fmt_float(t) for t in rec.frame_times)
        lines.append(f"{rec.id}\t{rec.movie_id}\t{rec.split}\t{times}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Splits, vocabulary, distribution analytics
# ---------------------------------------------------------------------------


def make_split(dev_ids: Iterable[str], fraction: float, seed: int) -> SplitAssignment:
    """Deterministic train/val partition of the dev ids.

    Ids are sorted, permuted by a generator seeded from ``seed``, and the
    first round(fraction * n) become the train set.  A pure function of
    (ids, fraction, seed).
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fraction must lie in (0, 1), got {fraction}")
    ids = sorted(set(dev_ids))
    if len(ids) < 2:
        raise ConfigError("need at least 2 dev ids to split")
    rng = generator(seed, "split")
    perm = rng.permutation(len(ids))
    n_train = round(fraction * len(ids))
    train = frozenset(ids[i] for i in perm[:n_train])
    val = frozenset(ids[i] for i in perm[n_train:])
    return SplitAssignment(train_ids=train, val_ids=val, seed=seed)


def select_subclasses(candidate_counts: Mapping[str, int], threshold: int) -> SubclassVocabulary:
    """Keep concepts whose count is strictly greater than the threshold,
    sorted by descending count, ties broken lexicographically."""
    for name, count in candidate_counts.items():
        if count < 0:
            raise DataValidationError(f"negative count for concept {name!r}")
    kept = [name for name, count in candidate_counts.items() if count > threshold]
    kept.sort(key=lambda name: (-candidate_counts[name], name))
    return SubclassVocabulary(names=tuple(kept))


def occurrence_rates(
    labels: LabelStore, vocab: SubclassVocabulary, ids: Iterable[str]
) -> np.ndarray:
    """Per-subclass fraction of violence videos (within ids) carrying that
    subclass label.  Errors if ids contain no violence video."""
    violent = [vid for vid in ids if labels.is_violent(vid)]
    if not violent:
        raise DegenerateLabelsError("occurrence rates undefined with zero violence videos")
    rates = np.zeros(vocab.size)
    for vid in violent:
        subs = labels.subclass_set(vid)
        for i, name in enumerate(vocab.names):
            if name in subs:
                rates[i] += 1.0
    return rates / len(violent)


def cooccurrence_matrix(
    labels: LabelStore, vocab: SubclassVocabulary, ids: Iterable[str] | None = None
) -> np.ndarray:
    """Symmetric count matrix: M[i, j] = number of videos labeled with both
    subclass i and subclass j; the diagonal holds per-subclass counts."""
    if ids is None:
        ids = labels.ids()
    size = vocab.size
    m = np.zeros((size, size), dtype=np.int64)
    for vid in ids:
        subs = labels.subclass_set(vid)
        present = [i for i, name in enumerate(vocab.names) if name in subs]
        for i in present:
            for j in present:
                m[i, j] += 1
    return m


def divergence(rates_a: Sequence[float], rates_b: Sequence[float]) -> float:
    """L1 distance between two occurrence-rate vectors."""
    a = np.asarray(rates_a, dtype=float)
    b = np.asarray(rates_b, dtype=float)
    if a.shape != b.shape:
        raise DataValidationError(f"rate vectors differ in length: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


# ---------------------------------------------------------------------------
# Whole-corpus loading
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Corpus:
    """Everything under one corpus directory, with lazy feature loading."""

    root: Path
    videos: Mapping[str, VideoRecord]
    labels: LabelStore
    vocab: SubclassVocabulary
    feature_specs: Mapping[str, FeatureSpec]
    manifest: Mapping = field(default_factory=dict)

    def ids(self, split: str) -> tuple[str, ...]:
        if split not in ("dev", "test"):
            raise ConfigError(f"unknown split {split!r}")
        return tuple(sorted(vid for vid, rec in self.videos.items() if rec.split == split))

    def load_feature(self, name: str) -> FeatureTable:
        if name not in self.feature_specs:
            raise ConfigError(f"unknown feature {name!r}; corpus has {sorted(self.feature_specs)}")
        return load_features(self.root / "features" / f"{name}.tsv", self.feature_specs[name])

    def load_split(self) -> SplitAssignment:
        return load_split(self.root / "split.tsv")

    def has_split_file(self) -> bool:
        return (self.root / "split.tsv").exists()


def load_corpus(root) -> Corpus:
    """Load and cross-validate a corpus directory."""
    root = Path(root)
    if not root.is_dir():
        raise DataValidationError(f"corpus directory {root} does not exist")
    manifest_path = root / "manifest.json"
    manifest = {}
    if manifest_path.exists():
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    videos = load_videos(root / "videos.tsv")
    labels = load_annotations(root / "annotations.tsv")
    for vid in labels.violence:
        if vid not in videos:
            raise DataValidationError(f"annotations mention unknown video {vid!r}")
    vocab = SubclassVocabulary(names=tuple(manifest.get("vocabulary", ())))
    if not vocab.names:
        # fall back to the names observed in the annotations
        seen = sorted({s for subs in labels.subclasses.values() for s in subs})
        vocab = SubclassVocabulary(names=tuple(seen))
    for vid, subs in labels.subclasses.items():
        unknown = subs - set(vocab.names)
        if unknown:
            raise DataValidationError(f"video {vid!r} labeled with unknown subclasses {sorted(unknown)}")
    specs = {}
    for entry in manifest.get("features", ()):
        spec = FeatureSpec(**entry)
        specs[spec.name] = spec
    if not specs and (root / "features").is_dir():
        raise DataValidationError(f"{root}: features present but manifest.json lists none")
    return Corpus(
        root=root,
        videos=videos,
        labels=labels,
        vocab=vocab,
        feature_specs=specs,
        manifest=manifest,
    )
