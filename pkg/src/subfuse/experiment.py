"""End-to-end runs: train a classifier bank, fuse, evaluate on val and test.

A run is specified by a feature subset, a subclass mode and a weighting
strategy:

* subclass_mode "none"  - one parent-concept (violence) classifier per
  feature; the bank is fused with ``fusion_mode`` ("avg" or "learn").
* subclass_mode "avg"   - one classifier per (feature, subclass) pair,
  fused with uniform weights.
* subclass_mode "learn" - same bank, weights learned on the val split by
  coordinate ascent.

Everything downstream of the corpus is a pure function of (corpus, config),
so a run with a fixed seed is byte-identical across invocations.
"""

from __future__ import annotations

import hashlib
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import SplitAssignment, atomic_write_text, make_split, write_vector_table
from .errors import ConfigError, DataValidationError
from .fuse import FusionConfig, FusionModel, assemble_bank, fuse_scores, learn_weights, uniform_fusion
from .learn import ClassifierKey, EnsembleModel, TrainConfig, negative_bootstrap, normalize_scores, save_model
from .metrics import EvalReport, evaluate, save_report
from .temporal import FrameScoreSeries, aggregate

DEFAULT_TEMPORAL_WINDOW = 5


@dataclass(frozen=True)
class RunConfig:
    features: tuple[str, ...]
    subclass_mode: str = "none"  # none | avg | learn
    fusion_mode: str | None = None  # weighting for subclass_mode none; defaults to avg
    include_parent: bool = False
    temporal_window: int = DEFAULT_TEMPORAL_WINDOW
    train: TrainConfig = field(default_factory=TrainConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    train_fraction: float = 0.7
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.features:
            raise ConfigError("run needs at least one feature")
        if self.subclass_mode not in ("none", "avg", "learn"):
            raise ConfigError(f"subclass_mode must be none, avg or learn, got {self.subclass_mode!r}")
        if self.fusion_mode not in (None, "avg", "learn"):
            raise ConfigError(f"fusion_mode must be avg or learn, got {self.fusion_mode!r}")
        if self.subclass_mode in ("avg", "learn") and self.fusion_mode not in (None, self.subclass_mode):
            raise ConfigError(
                f"subclass_mode {self.subclass_mode!r} fixes the weighting; fusion_mode {self.fusion_mode!r} conflicts"
            )
        if self.train.seed != self.seed:
            object.__setattr__(self, "train", TrainConfig(**{**asdict(self.train), "seed": self.seed}))

    @property
    def weighting(self) -> str:
        if self.subclass_mode == "none":
            return self.fusion_mode or "avg"
        return self.subclass_mode

    def run_id(self) -> str:
        payload = json.dumps(to_dict(self), sort_keys=True)
        return hashlib.blake2b(payload.encode(), digest_size=6).hexdigest()


def to_dict(config: RunConfig) -> dict:
    d = asdict(config)
    d["train"]["lambda_grid"] = list(config.train.lambda_grid)
    d["fusion"]["weight_grid"] = list(config.fusion.weight_grid)
    d["features"] = list(config.features)
    return d


def from_dict(d: Mapping) -> RunConfig:
    d = dict(d)
    train = d.pop("train", {})
    fusion = d.pop("fusion", {})
    if isinstance(train, Mapping):
        train = TrainConfig(**{**train, "lambda_grid": tuple(train.get("lambda_grid", (1e-4, 1e-3, 1e-2, 1e-1)))})
    if isinstance(fusion, Mapping):
        kwargs = dict(fusion)
        if "weight_grid" in kwargs:
            kwargs["weight_grid"] = tuple(kwargs["weight_grid"])
        fusion = FusionConfig(**kwargs)
    d["features"] = tuple(d.get("features", ()))
    return RunConfig(**d, train=train, fusion=fusion)


@dataclass(frozen=True)
class RunResult:
    config: RunConfig
    reports: Mapping[str, EvalReport]  # "val" and "test"
    fusion: FusionModel
    models: Mapping[ClassifierKey, EnsembleModel]
    scores: Mapping[str, Mapping[ClassifierKey, Mapping[str, float]]]  # split -> key -> vid -> score


def _class_membership(labels, class_name: str):
    if class_name == "violence":
        return lambda vid: labels.is_violent(vid)
    return lambda vid: class_name in labels.subclass_set(vid)


def _video_level_scores(model: EnsembleModel, table, vids: Sequence[str]) -> np.ndarray:
    missing = [v for v in vids if v not in table.index]
    if missing:
        raise DataValidationError(f"feature {table.spec.name!r} lacks vectors for videos {missing[:5]}")
    mat = np.vstack([table.vector(v) for v in vids])
    return model.score(mat)


def _frame_level_scores(
    model: EnsembleModel, table, videos, vids: Sequence[str], window: int
) -> np.ndarray:
    out = np.empty(len(vids))
    for i, vid in enumerate(vids):
        frames = table.frames_of(vid)
        if not frames:
            raise DataValidationError(f"feature {table.spec.name!r}: video {vid!r} has no frames")
        mat = np.vstack([table.vector((vid, f)) for f in frames])
        frame_times = videos[vid].frame_times
        times = tuple(frame_times[f] if f < len(frame_times) else float(f) for f in frames)
        series = FrameScoreSeries(video_id=vid, times=times, scores=model.score(mat))
        out[i] = aggregate(series, window)
    return out


def _train_and_score_key(key: ClassifierKey, corpus, split: SplitAssignment, config: RunConfig, table):
    labels = corpus.labels
    member_of = _class_membership(labels, key.class_name)
    train_ids = sorted(split.train_ids)
    pos_ids = [v for v in train_ids if member_of(v)]
    neg_ids = [v for v in train_ids if not member_of(v)]
    # frame-level features contribute one training vector per frame,
    # video-level ones a single vector per video
    positives = table.rows_for_videos(pos_ids)
    negatives = table.rows_for_videos(neg_ids)
    model = negative_bootstrap(positives, negatives, key, config.train)

    val_ids = sorted(split.val_ids)
    test_ids = list(corpus.ids("test"))
    if table.spec.level == "video":
        val_scores = _video_level_scores(model, table, val_ids)
        test_scores = _video_level_scores(model, table, test_ids)
    else:
        val_scores = _frame_level_scores(model, table, corpus.videos, val_ids, config.temporal_window)
        test_scores = _frame_level_scores(model, table, corpus.videos, test_ids, config.temporal_window)
    val_norm, test_norm = normalize_scores(val_scores, test_scores)
    return key, model, dict(zip(val_ids, val_norm)), dict(zip(test_ids, test_norm))


def run_experiment(corpus, config: RunConfig, out_dir=None) -> RunResult:
    """Train the configured bank, fit fusion on val, evaluate val and test."""
    if corpus.has_split_file():
        split = corpus.load_split()
    else:
        split = make_split(corpus.ids("dev"), config.train_fraction, config.seed)
    keys = assemble_bank(
        config.features,
        config.subclass_mode,
        corpus.vocab,
        available=corpus.feature_specs,
        include_parent=config.include_parent,
    )
    tables = {name: corpus.load_feature(name) for name in config.features}

    def work(key: ClassifierKey):
        return _train_and_score_key(key, corpus, split, config, tables[key.feature_name])

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, keys))
    else:
        results = [work(key) for key in keys]

    models = {key: model for key, model, _, _ in results}
    val_scores = {key: scores for key, _, scores, _ in results}
    test_scores = {key: scores for key, _, _, scores in results}

    val_ids = sorted(split.val_ids)
    labels = corpus.labels
    val_rel = np.array([labels.is_violent(v) for v in val_ids], dtype=bool)
    val_matrix = np.column_stack([np.array([val_scores[k][v] for v in val_ids]) for k in keys])

    if config.weighting == "learn":
        fusion = learn_weights(keys, val_matrix, val_rel, config.fusion)
    else:
        fusion = uniform_fusion(keys, val_matrix, val_rel)

    run_id = config.run_id()
    reports = {}
    fused_by_split = {}
    for split_name, ids, per_key in (
        ("val", val_ids, val_scores),
        ("test", list(corpus.ids("test")), test_scores),
    ):
        matrix = np.column_stack([np.array([per_key[k][v] for v in ids]) for k in fusion.keys])
        fused = fuse_scores(fusion, matrix)
        scores_map = dict(zip(ids, fused))
        fused_by_split[split_name] = scores_map
        reports[split_name] = evaluate(
            scores_map, {v: labels.is_violent(v) for v in ids}, run_id=run_id
        )

    result = RunResult(
        config=config,
        reports=reports,
        fusion=fusion,
        models=models,
        scores={"val": val_scores, "test": test_scores},
    )
    if out_dir is not None:
        _write_run_artifacts(result, fused_by_split, out_dir)
    return result


def _write_run_artifacts(result: RunResult, fused_by_split, out_dir) -> None:
    out = Path(out_dir)
    from .fuse import save_fusion  # local import keeps module deps one-way

    for key in sorted(result.models, key=lambda k: k.sort_key()):
        save_model(result.models[key], out / "models" / f"{key.feature_name}__{key.class_name}.tsv")
    save_fusion(result.fusion, out / "fusion.tsv")
    for split_name, report in result.reports.items():
        save_report(report, out / "reports" / f"{split_name}.json")
    for split_name, scores_map in fused_by_split.items():
        ids = sorted(scores_map)
        write_vector_table(
            ids, np.array([[scores_map[v]] for v in ids]), out / "scores" / f"fused_{split_name}.tsv"
        )
    for split_name, per_key in result.scores.items():
        for key, scores_map in per_key.items():
            ids = sorted(scores_map)
            write_vector_table(
                ids,
                np.array([[scores_map[v]] for v in ids]),
                out / "scores" / split_name / f"{key.feature_name}__{key.class_name}.tsv",
            )
    config_json = json.dumps(to_dict(result.config), indent=2, sort_keys=True)
    atomic_write_text(out / "run_config.json", config_json + "\n")


# ---------------------------------------------------------------------------
# Report tables
# ---------------------------------------------------------------------------

VALUE_FORMAT = "{:.4f}"


def emit_table(
    rows: Sequence[tuple[str, Mapping[str, float]]],
    groups: Sequence[tuple[str, Sequence[str]]] | None = None,
    sort_by: str | None = "test_ap",
) -> str:
    """Render runs as an aligned text grid.

    Rows sort descending by ``sort_by`` (when every row has it); within
    each column group the per-row best value is marked with asterisks.
    """
    if not rows:
        raise ConfigError("no rows to render")
    columns = list(rows[0][1])
    for label, values in rows:
        if list(values) != columns:
            raise DataValidationError(f"row {label!r} has columns {list(values)}, expected {columns}")
    if groups is None:
        groups = (("", tuple(columns)),)
    grouped_cols = [c for _, cols in groups for c in cols]
    if sorted(grouped_cols) != sorted(columns):
        raise ConfigError("groups must cover exactly the row columns")
    ordered = list(rows)
    if sort_by is not None and all(sort_by in values for _, values in rows):
        ordered.sort(key=lambda row: (-row[1][sort_by], row[0]))

    def render_cell(label: str, col: str, values: Mapping[str, float]) -> str:
        text = VALUE_FORMAT.format(values[col])
        for _, cols in groups:
            if col in cols:
                best = max(values[c] for c in cols)
                if values[col] == best:
                    return f"*{text}*"
        return text

    header = ["run"] + list(grouped_cols)
    body = [[label] + [render_cell(label, c, values) for c in grouped_cols] for label, values in ordered]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = []
    for r in [header] + body:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> list[tuple[str, dict[str, float]]]:
    """Invert emit_table at the rendered precision."""
    lines = [line for line in text.splitlines() if line.strip()]
    header = re.split(r"\s{2,}", lines[0].strip())
    columns = header[1:]
    out = []
    for line in lines[1:]:
        cells = re.split(r"\s{2,}", line.strip())
        label = cells[0]
        values = {c: float(cell.strip("*")) for c, cell in zip(columns, cells[1:])}
        out.append((label, values))
    return out


# ---------------------------------------------------------------------------
# The thirteen multi-feature run presets
# ---------------------------------------------------------------------------

_ALL_FEATURES = (
    "vnet_f", "vnet_v", "gnet_f", "gnet_v", "g4k_f", "g4k_v",
    "mfcc_b", "mfcc_fv",
    "mbh_b", "mbh_fv", "hog_b", "hog_fv", "hof_b", "hof_fv",
)

TABLE3_ROWS: dict[str, tuple[str, ...]] = {
    "table3-row1": ("vnet_f", "vnet_v", "gnet_f", "gnet_v", "g4k_f", "g4k_v", "mfcc_b", "mfcc_fv"),
    "table3-row2": ("g4k_f", "g4k_v", "mfcc_b", "mfcc_fv", "mbh_b", "hog_b", "hof_b"),
    "table3-row3": ("g4k_f", "g4k_v", "mfcc_b", "mfcc_fv"),
    "table3-row4": _ALL_FEATURES,
    "table3-row5": ("vnet_f", "vnet_v", "gnet_f", "gnet_v", "g4k_f", "g4k_v", "mfcc_b", "mbh_b", "hog_b", "hof_b"),
    "table3-row6": ("vnet_f", "vnet_v", "gnet_f", "gnet_v", "g4k_f", "g4k_v", "mbh_b", "hog_b", "hof_b"),
    "table3-row7": ("vnet_f", "vnet_v", "gnet_f", "gnet_v", "g4k_f", "g4k_v", "mfcc_b"),
    "table3-row8": ("vnet_f", "vnet_v", "gnet_f", "gnet_v", "g4k_f", "g4k_v"),
    "table3-row9": ("vnet_f", "vnet_v", "gnet_f", "gnet_v", "g4k_f", "g4k_v", "mbh_b", "mbh_fv", "hog_b", "hog_fv", "hof_b", "hof_fv"),
    "table3-row10": ("vnet_f", "vnet_v", "gnet_f", "gnet_v", "g4k_f", "g4k_v", "mbh_fv", "hog_fv", "hof_fv"),
    "table3-row11": ("mfcc_b", "mfcc_fv", "mbh_b", "mbh_fv", "hog_b", "hog_fv", "hof_b", "hof_fv"),
    "table3-row12": ("mfcc_b", "mfcc_fv"),
    "table3-row13": ("mbh_b", "mbh_fv", "hog_b", "hog_fv", "hof_b", "hof_fv"),
}


def run_preset(name: str) -> tuple[str, ...]:
    if name not in TABLE3_ROWS:
        raise ConfigError(f"unknown run preset {name!r}; available: {', '.join(TABLE3_ROWS)}")
    return TABLE3_ROWS[name]
