"""Synthetic corpora with subclass structure and controllable dev/test
distribution shift.

Each subclass owns one near-orthogonal prototype direction per feature.  A
violent video activates a subclass set drawn from its split's occurrence
vector, and its feature vectors are the informativeness-scaled sum of the
active prototypes plus Gaussian noise; non-violent videos are pure noise.
Making a feature informative only for subclasses that are rare in dev but
common in test reproduces the situation where fusion weights learned on
the dev side stop helping on the test side.

Generation is deterministic: every video's draws come from a substream
keyed by (seed, purpose, split, index), so videos could be generated in
any order or in parallel without changing the corpus.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import (
    FeatureSpec,
    FeatureTable,
    LabelStore,
    SplitAssignment,
    SubclassVocabulary,
    VideoRecord,
    atomic_write_text,
    make_split,
    write_annotations,
    write_features,
    write_split,
    write_videos,
)
from .encode import DescriptorSet, write_descriptors
from .errors import ConfigError, DataValidationError
from .rng import generator

FRAME_INTERVAL_SECONDS = 0.5
PROTOTYPE_MAX_COSINE = 0.2
VIDEOS_PER_MOVIE = 10


@dataclass(frozen=True)
class DescriptorRecipe:
    """A raw local-descriptor stream to synthesize (for the codebook /
    encoding pipeline): name, dimension, and descriptors per video."""

    name: str
    dim: int
    per_video: tuple[int, int] = (20, 40)


@dataclass(frozen=True)
class GeneratorConfig:
    num_dev: int
    num_test: int
    vocab: SubclassVocabulary
    occurrence_dev: tuple[float, ...]
    occurrence_test: tuple[float, ...]
    features: tuple[FeatureSpec, ...] = ()
    informativeness: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    violence_prevalence_dev: float = 0.044
    violence_prevalence_test: float = 0.048
    noise_sigma: float = 0.3
    noise_overrides: Mapping[str, float] = field(default_factory=dict)
    frames_per_video: tuple[int, int] = (4, 8)
    descriptor_recipes: tuple[DescriptorRecipe, ...] = ()
    cooccur_boost: Mapping[tuple[str, str], float] = field(default_factory=dict)
    train_fraction: float = 0.7
    seed: int = 0
    preset_name: str | None = None

    def __post_init__(self):
        if self.num_dev < 2 or self.num_test < 1:
            raise ConfigError("need at least 2 dev and 1 test videos")
        for name, p in (
            ("violence_prevalence_dev", self.violence_prevalence_dev),
            ("violence_prevalence_test", self.violence_prevalence_test),
        ):
            if not 0.0 < p < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {p}")
        for name, rates in (("occurrence_dev", self.occurrence_dev), ("occurrence_test", self.occurrence_test)):
            if len(rates) != self.vocab.size:
                raise ConfigError(f"{name} must have one rate per subclass")
            if any(not 0.0 <= r <= 1.0 for r in rates):
                raise ConfigError(f"{name} rates must lie in [0, 1]")
        for feat, per_sub in self.informativeness.items():
            for sub, v in per_sub.items():
                if not 0.0 <= v <= 1.0:
                    raise ConfigError(f"informativeness[{feat!r}][{sub!r}] must lie in [0, 1]")
        if self.noise_sigma < 0 or any(v < 0 for v in self.noise_overrides.values()):
            raise ConfigError("noise sigma must be nonnegative")
        lo, hi = self.frames_per_video
        if lo < 1 or hi < lo:
            raise ConfigError("frames_per_video must be a nondecreasing positive range")

    def informativeness_of(self, feature: str, subclass: str) -> float:
        return float(self.informativeness.get(feature, {}).get(subclass, 0.0))

    def noise_of(self, feature: str) -> float:
        return float(self.noise_overrides.get(feature, self.noise_sigma))


@dataclass(frozen=True)
class SyntheticCorpus:
    """In-memory corpus with the same reading surface as corpus.Corpus,
    plus the generator ground truth for verification."""

    videos: Mapping[str, VideoRecord]
    labels: LabelStore
    vocab: SubclassVocabulary
    feature_specs: Mapping[str, FeatureSpec]
    feature_tables: Mapping[str, FeatureTable]
    descriptors: Mapping[str, Mapping[str, DescriptorSet]]
    split: SplitAssignment
    config: GeneratorConfig

    def ids(self, split: str) -> tuple[str, ...]:
        if split not in ("dev", "test"):
            raise ConfigError(f"unknown split {split!r}")
        return tuple(sorted(vid for vid, rec in self.videos.items() if rec.split == split))

    def load_feature(self, name: str) -> FeatureTable:
        if name not in self.feature_tables:
            raise ConfigError(f"unknown feature {name!r}")
        return self.feature_tables[name]

    def load_split(self) -> SplitAssignment:
        return self.split

    def has_split_file(self) -> bool:
        return True

    @property
    def manifest(self) -> dict:
        return manifest_dict(self.config)

    def write(self, out_dir) -> None:
        """Emit the corpus in the standard directory layout."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_videos(self.videos, out / "videos.tsv")
        write_annotations(self.labels, out / "annotations.tsv")
        write_split(self.split, out / "split.tsv")
        for name in sorted(self.feature_tables):
            write_features(self.feature_tables[name], out / "features" / f"{name}.tsv")
        for name in sorted(self.descriptors):
            recipe = next(r for r in self.config.descriptor_recipes if r.name == name)
            write_descriptors(dict(self.descriptors[name]), recipe.dim, out / "descriptors" / f"{name}.tsv")
        atomic_write_text(out / "manifest.json", json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")


def manifest_dict(config: GeneratorConfig) -> dict:
    return {
        "vocabulary": list(config.vocab.names),
        "features": [
            {
                "name": s.name,
                "modality": s.modality,
                "level": s.level,
                "dim": s.dim,
                "encoding": s.encoding,
            }
            for s in config.features
        ],
        "generator": {
            "preset": config.preset_name,
            "seed": config.seed,
            "num_dev": config.num_dev,
            "num_test": config.num_test,
            "violence_prevalence_dev": config.violence_prevalence_dev,
            "violence_prevalence_test": config.violence_prevalence_test,
            "occurrence_dev": list(config.occurrence_dev),
            "occurrence_test": list(config.occurrence_test),
            "noise_sigma": config.noise_sigma,
            "noise_overrides": dict(config.noise_overrides),
            "informativeness": {f: dict(per) for f, per in config.informativeness.items()},
            "frames_per_video": list(config.frames_per_video),
            "descriptor_recipes": [
                {"name": r.name, "dim": r.dim, "per_video": list(r.per_video)}
                for r in config.descriptor_recipes
            ],
            "train_fraction": config.train_fraction,
        },
    }


# ---------------------------------------------------------------------------
# Prototype directions
# ---------------------------------------------------------------------------


def _prototype_directions(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """n random unit vectors with pairwise |cosine| below the threshold,
    found by rejection sampling."""
    if n == 0:
        return np.empty((0, dim))
    protos = np.empty((n, dim))
    count = 0
    for _ in range(200_000):
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if count and np.abs(protos[:count] @ v).max() >= PROTOTYPE_MAX_COSINE:
            continue
        protos[count] = v
        count += 1
        if count == n:
            return protos
    raise ConfigError(
        f"could not place {n} prototypes with pairwise |cos| < {PROTOTYPE_MAX_COSINE} in dim {dim};"
        " increase the feature dim"
    )


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def _draw_subclasses(
    vocab: SubclassVocabulary,
    occurrence: np.ndarray,
    boost: Mapping[tuple[str, str], float],
    rng: np.random.Generator,
) -> frozenset[str]:
    """Independent per-subclass draws, redrawn while empty, then the
    optional pairwise co-occurrence boost."""
    if vocab.size == 0 or occurrence.sum() == 0:
        return frozenset()
    for _ in range(10_000):
        mask = rng.random(vocab.size) < occurrence
        if mask.any():
            break
    else:  # pragma: no cover - occurrence sum > 0 makes this unreachable in practice
        return frozenset()
    active = {name for name, hit in zip(vocab.names, mask) if hit}
    for (a, b), p in sorted(boost.items()):
        if (a in active) != (b in active) and rng.random() < p:
            active.add(b if a in active else a)
    return frozenset(active)


def generate(config: GeneratorConfig, out_dir=None) -> SyntheticCorpus:
    """Generate a corpus; optionally also write it under ``out_dir``."""
    vocab = config.vocab
    videos: dict[str, VideoRecord] = {}
    violence: dict[str, bool] = {}
    subclasses: dict[str, frozenset[str]] = {}
    active_segments: dict[str, tuple[int, int]] = {}

    split_sizes = {"dev": config.num_dev, "test": config.num_test}
    prevalence = {"dev": config.violence_prevalence_dev, "test": config.violence_prevalence_test}
    occurrence = {
        "dev": np.asarray(config.occurrence_dev, dtype=float),
        "test": np.asarray(config.occurrence_test, dtype=float),
    }
    lo, hi = config.frames_per_video
    for split in ("dev", "test"):
        for i in range(split_sizes[split]):
            vid = f"{split}{i:05d}"
            label_rng = generator(config.seed, "labels", split, i)
            is_violent = bool(label_rng.random() < prevalence[split])
            violence[vid] = is_violent
            if is_violent:
                subs = _draw_subclasses(vocab, occurrence[split], config.cooccur_boost, label_rng)
                if subs:
                    subclasses[vid] = subs
            frame_rng = generator(config.seed, "frames", split, i)
            n_frames = int(frame_rng.integers(lo, hi + 1))
            times = tuple(FRAME_INTERVAL_SECONDS * t for t in range(n_frames))
            videos[vid] = VideoRecord(
                id=vid,
                movie_id=f"{split}_movie{i // VIDEOS_PER_MOVIE:04d}",
                split=split,
                frame_times=times,
            )
            # the contiguous span of frames where subclass evidence is visible
            seg_len = max(1, math.ceil(n_frames / 2))
            seg_start = int(frame_rng.integers(0, n_frames - seg_len + 1))
            active_segments[vid] = (seg_start, seg_start + seg_len)

    labels = LabelStore(violence=violence, subclasses=subclasses)

    feature_tables: dict[str, FeatureTable] = {}
    for spec in config.features:
        protos = _prototype_directions(vocab.size, spec.dim, generator(config.seed, "proto", spec.name))
        info = np.array([config.informativeness_of(spec.name, s) for s in vocab.names])
        sigma = config.noise_of(spec.name)
        keys: list = []
        rows: list[np.ndarray] = []
        for split in ("dev", "test"):
            for i in range(split_sizes[split]):
                vid = f"{split}{i:05d}"
                subs = labels.subclass_set(vid)
                signal = np.zeros(spec.dim)
                for s in subs:
                    j = vocab.index(s)
                    signal += info[j] * protos[j]
                feat_rng = generator(config.seed, "feature", spec.name, split, i)
                if spec.level == "video":
                    vec = signal + sigma * feat_rng.standard_normal(spec.dim)
                    keys.append(vid)
                    rows.append(vec)
                else:
                    n_frames = len(videos[vid].frame_times)
                    seg = active_segments[vid]
                    noise = sigma * feat_rng.standard_normal((n_frames, spec.dim))
                    for f in range(n_frames):
                        vec = noise[f] + (signal if seg[0] <= f < seg[1] else 0.0)
                        keys.append((vid, f))
                        rows.append(vec)
        values = np.vstack(rows) if rows else np.empty((0, spec.dim))
        feature_tables[spec.name] = FeatureTable(spec=spec, keys=tuple(keys), values=values)

    descriptor_sets: dict[str, dict[str, DescriptorSet]] = {}
    for recipe in config.descriptor_recipes:
        protos = _prototype_directions(vocab.size, recipe.dim, generator(config.seed, "proto", recipe.name))
        sigma = config.noise_of(recipe.name)
        per_video: dict[str, DescriptorSet] = {}
        for split in ("dev", "test"):
            for i in range(split_sizes[split]):
                vid = f"{split}{i:05d}"
                rng = generator(config.seed, "descriptor", recipe.name, split, i)
                count = int(rng.integers(recipe.per_video[0], recipe.per_video[1] + 1))
                vecs = sigma * rng.standard_normal((count, recipe.dim))
                subs = sorted(labels.subclass_set(vid))
                if subs:
                    picks = rng.integers(0, len(subs), size=count)
                    for d in range(count):
                        j = vocab.index(subs[picks[d]])
                        vecs[d] += config.informativeness_of(recipe.name, subs[picks[d]]) * protos[j]
                per_video[vid] = DescriptorSet(recipe.dim, vecs)
        descriptor_sets[recipe.name] = per_video

    dev_ids = [vid for vid, rec in videos.items() if rec.split == "dev"]
    split = make_split(dev_ids, config.train_fraction, config.seed)

    corpus = SyntheticCorpus(
        videos=videos,
        labels=labels,
        vocab=vocab,
        feature_specs={s.name: s for s in config.features},
        feature_tables=feature_tables,
        descriptors=descriptor_sets,
        split=split,
        config=config,
    )
    if out_dir is not None:
        corpus.write(out_dir)
    return corpus


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

PRESET_VOCAB = SubclassVocabulary(
    names=("aim", "bind", "blood", "chase", "death", "explosion", "fight", "fire", "rope", "weapon")
)
# first five are the dev-side group, last five the test-side group
_DEV_GROUP = PRESET_VOCAB.names[:5]
_TEST_GROUP = PRESET_VOCAB.names[5:]

_COMMON_RATES = (0.55, 0.50, 0.45, 0.40, 0.35)
_RARE_RATES = (0.10, 0.09, 0.08, 0.08, 0.07)
_MATCHED_RATES = (0.45, 0.40, 0.35, 0.30, 0.30, 0.25, 0.25, 0.20, 0.15, 0.10)

PRESET_FEATURE_DIM = 32


def _preset_features() -> tuple[FeatureSpec, ...]:
    """The fourteen standard feature names at desk-scale dimensionality."""
    specs = []
    for name in ("vnet_f", "gnet_f", "g4k_f"):
        specs.append(FeatureSpec(name, "image", "frame", PRESET_FEATURE_DIM, "raw"))
    for name in ("vnet_v", "gnet_v", "g4k_v"):
        specs.append(FeatureSpec(name, "image", "video", PRESET_FEATURE_DIM, "raw"))
    for name in ("mfcc_b", "mfcc_fv"):
        specs.append(FeatureSpec(name, "audio", "video", PRESET_FEATURE_DIM, "raw"))
    for name in ("mbh_b", "mbh_fv", "hog_b", "hog_fv", "hof_b", "hof_fv"):
        specs.append(FeatureSpec(name, "motion", "video", PRESET_FEATURE_DIM, "raw"))
    return tuple(specs)


def _preset_informativeness() -> dict[str, dict[str, float]]:
    """Image features carry the dev-side subclasses, audio features carry
    only the test-side ones, motion features are weak all around."""
    info: dict[str, dict[str, float]] = {}
    for spec in _preset_features():
        if spec.modality == "image":
            info[spec.name] = {s: 0.9 for s in _DEV_GROUP}
        elif spec.modality == "audio":
            info[spec.name] = {s: 0.9 for s in _TEST_GROUP}
        else:
            info[spec.name] = {s: 0.25 for s in PRESET_VOCAB.names}
    info["mfcc_raw"] = {s: 0.9 for s in _TEST_GROUP}
    return info


def preset(name: str) -> GeneratorConfig:
    """Shipped generator configurations.

    ``matched-v1`` uses identical dev/test occurrence vectors;
    ``divergent-v1`` swaps which subclasses are common between dev and
    test and makes the audio features informative only for the subclasses
    that are rare in dev but common in test.
    """
    if name == "matched-v1":
        occurrence_dev = occurrence_test = _MATCHED_RATES
    elif name == "divergent-v1":
        occurrence_dev = _COMMON_RATES + _RARE_RATES
        occurrence_test = _RARE_RATES + _COMMON_RATES
    else:
        raise ConfigError(f"unknown preset {name!r}; available: matched-v1, divergent-v1")
    return GeneratorConfig(
        num_dev=400,
        num_test=300,
        vocab=PRESET_VOCAB,
        occurrence_dev=occurrence_dev,
        occurrence_test=occurrence_test,
        features=_preset_features(),
        informativeness=_preset_informativeness(),
        violence_prevalence_dev=0.35,
        violence_prevalence_test=0.35,
        noise_sigma=0.3,
        frames_per_video=(4, 8),
        descriptor_recipes=(DescriptorRecipe(name="mfcc_raw", dim=16, per_video=(20, 40)),),
        seed=0,
        preset_name=name,
    )


PRESET_NAMES = ("matched-v1", "divergent-v1")


# ---------------------------------------------------------------------------
# Imbalanced benchmark for the hard-negative bootstrap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImbalancedBenchmark:
    """A 95:5 classification task whose negatives are mostly easy, with a
    hard minority cluster that random negative selection rarely sees."""

    train_positives: np.ndarray
    negative_pool: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray


def make_imbalanced(
    seed: int,
    n_pos: int = 25,
    n_pool: int = 475,
    n_val: int = 300,
    dim: int = 6,
    hard_fraction: float = 0.08,
    sigma: float = 0.6,
) -> ImbalancedBenchmark:
    """Positives sit at (+2, +1), easy negatives at (-2, 0) and hard
    negatives at (+2, -1) on the first two axes.  A model trained on a
    random (mostly easy) negative draw separates along the first axis and
    ranks the hard cluster as high as the positives; telling them apart
    requires the second axis, which only hard-negative training reveals."""
    rng = generator(seed, "imbalanced")
    pos_center = np.zeros(dim)
    pos_center[0], pos_center[1] = 2.0, 1.0
    hard_center = np.zeros(dim)
    hard_center[0], hard_center[1] = 2.0, -1.0
    easy_center = np.zeros(dim)
    easy_center[0] = -2.0

    def negatives(n: int) -> np.ndarray:
        n_hard = int(round(hard_fraction * n))
        easy = easy_center + sigma * rng.standard_normal((n - n_hard, dim))
        hard = hard_center + sigma * rng.standard_normal((n_hard, dim))
        return np.vstack([easy, hard])

    train_positives = pos_center + sigma * rng.standard_normal((n_pos, dim))
    pool = negatives(n_pool)
    n_val_pos = max(1, int(round(n_val * n_pos / (n_pos + n_pool))))
    val_pos = pos_center + sigma * rng.standard_normal((n_val_pos, dim))
    val_neg = negatives(n_val - n_val_pos)
    val_x = np.vstack([val_pos, val_neg])
    val_y = np.concatenate([np.ones(n_val_pos, bool), np.zeros(n_val - n_val_pos, bool)])
    return ImbalancedBenchmark(
        train_positives=train_positives, negative_pool=pool, val_x=val_x, val_y=val_y
    )
