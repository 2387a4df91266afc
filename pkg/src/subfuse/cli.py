"""Command-line experiment harness.

Subcommands mirror the pipeline stages: synth, fit-codebook, encode,
train, score, fuse, eval, experiment, divergence.  Every subcommand takes
--seed, --config <json> and --out <dir>; all randomness descends from the
single seed, so repeating a command with the same arguments reproduces
its output files byte for byte.

Exit codes: 0 success, 2 configuration error, 3 data validation error,
4 degenerate labels.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import encode as encode_mod
from . import synth as synth_mod
from .corpus import (
    FeatureSpec,
    SubclassVocabulary,
    atomic_write_text,
    divergence,
    load_corpus,
    occurrence_rates,
    write_vector_table,
)
from .errors import ConfigError, DataValidationError, DegenerateLabelsError
from .experiment import (
    RunConfig,
    emit_table,
    from_dict,
    run_experiment,
    run_preset,
    to_dict,
)
from .fuse import FusionConfig, learn_weights, save_fusion, uniform_fusion
from .learn import ClassifierKey, TrainConfig, load_model, negative_bootstrap, save_model
from .metrics import evaluate, save_report
from .temporal import FrameScoreSeries, aggregate


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _generator_config_from_dict(d: dict, seed: int) -> synth_mod.GeneratorConfig:
    d = dict(d)
    vocab = SubclassVocabulary(names=tuple(d.pop("vocabulary")))
    features = tuple(FeatureSpec(**entry) for entry in d.pop("features", ()))
    recipes = tuple(
        synth_mod.DescriptorRecipe(name=r["name"], dim=r["dim"], per_video=tuple(r.get("per_video", (20, 40))))
        for r in d.pop("descriptor_recipes", ())
    )
    for key in ("occurrence_dev", "occurrence_test", "frames_per_video"):
        if key in d:
            d[key] = tuple(d[key])
    boost = {}
    for entry in d.pop("cooccur_boost", ()):
        boost[(entry["a"], entry["b"])] = float(entry["p"])
    return synth_mod.GeneratorConfig(
        vocab=vocab, features=features, descriptor_recipes=recipes, cooccur_boost=boost, seed=seed, **d
    )


def cmd_synth(args) -> int:
    if bool(args.preset) == bool(args.config):
        raise ConfigError("synth needs exactly one of --preset or --config")
    if args.preset:
        config = synth_mod.preset(args.preset)
        config = synth_mod.GeneratorConfig(**{**_cfg_fields(config), "seed": args.seed})
    else:
        config = _generator_config_from_dict(_load_config_file(args.config), args.seed)
    out = _out_dir(args)
    corpus = synth_mod.generate(config, out_dir=out)
    print(f"wrote corpus with {len(corpus.videos)} videos, {len(corpus.feature_tables)} features to {out}")
    return 0


def _cfg_fields(config) -> dict:
    from dataclasses import fields

    return {f.name: getattr(config, f.name) for f in fields(config)}


def cmd_fit_codebook(args) -> int:
    per_video = encode_mod.load_descriptors(args.descriptors)
    dim = next(iter(per_video.values())).descriptor_dim if per_video else 0
    sample = encode_mod.pool_training_sample(per_video, dim)
    out = _out_dir(args)
    name = args.name or Path(args.descriptors).stem
    if args.model == "kmeans":
        codebook = encode_mod.fit_codebook(sample, args.k, args.seed)
        encode_mod.save_codebook(codebook, out / f"{name}_kmeans_{args.k}.tsv")
        print(f"fit kmeans codebook K={args.k} on {len(sample)} descriptors -> {out}")
    else:
        gmm = encode_mod.fit_gmm(sample, args.k, args.seed)
        encode_mod.save_gmm(gmm, out / f"{name}_gmm_{args.k}.tsv")
        print(f"fit gmm K={args.k} on {len(sample)} descriptors -> {out}")
    return 0


def cmd_encode(args) -> int:
    out = _out_dir(args)
    if args.method in ("bow", "fv"):
        if not args.descriptors or not args.codebook:
            raise ConfigError(f"encode --method {args.method} needs --descriptors and --codebook")
        per_video = encode_mod.load_descriptors(args.descriptors)
        model = encode_mod.load_codebook(args.codebook)
        vids = sorted(per_video)
        if args.method == "bow":
            if not isinstance(model, encode_mod.Codebook):
                raise ConfigError("--codebook file holds a GMM; bow needs a kmeans codebook")
            dim = model.k
            rows = [encode_mod.encode_bow(per_video[v], model) for v in vids]
        else:
            if not isinstance(model, encode_mod.GmmModel):
                raise ConfigError("--codebook file holds a kmeans codebook; fv needs a GMM")
            dim = 2 * model.k * model.dim
            rows = [encode_mod.encode_fv(per_video[v], model) for v in vids]
        name = args.feature_name or f"{Path(args.descriptors).stem}_{args.method}"
        write_vector_table(vids, np.vstack(rows), out / f"{name}.tsv")
        print(f"encoded {len(vids)} videos to dim {dim} -> {out / (name + '.tsv')}")
    elif args.method == "avgpool":
        if not args.corpus or not args.feature:
            raise ConfigError("encode --method avgpool needs --corpus and --feature")
        corpus = load_corpus(args.corpus)
        table = corpus.load_feature(args.feature)
        pooled = encode_mod.avg_pool(table)
        corpus_mod.write_features(pooled, out / f"{pooled.spec.name}.tsv")
        print(f"pooled {len(table)} frames into {len(pooled)} video vectors -> {out}")
    else:
        raise ConfigError(f"unknown encode method {args.method!r}")
    return 0


def _train_config(args) -> TrainConfig:
    overrides = _load_config_file(args.config)
    overrides["seed"] = args.seed
    if "lambda_grid" in overrides:
        overrides["lambda_grid"] = tuple(overrides["lambda_grid"])
    return TrainConfig(**overrides)


def cmd_train(args) -> int:
    corpus = load_corpus(args.corpus)
    config = _train_config(args)
    split = corpus.load_split() if corpus.has_split_file() else corpus_mod.make_split(
        corpus.ids("dev"), 0.7, args.seed
    )
    table = corpus.load_feature(args.feature)
    key = ClassifierKey(args.feature, getattr(args, "class"))
    if key.class_name != "violence" and key.class_name not in corpus.vocab.names:
        raise ConfigError(f"class {key.class_name!r} is neither 'violence' nor a subclass")
    labels = corpus.labels
    member = (
        (lambda v: labels.is_violent(v))
        if key.class_name == "violence"
        else (lambda v: key.class_name in labels.subclass_set(v))
    )
    train_ids = sorted(split.train_ids)
    positives = table.rows_for_videos([v for v in train_ids if member(v)])
    negatives = table.rows_for_videos([v for v in train_ids if not member(v)])
    if positives.shape[0] == 0:
        raise DegenerateLabelsError(f"{key}: no positive training videos")
    model = negative_bootstrap(positives, negatives, key, config)
    out = _out_dir(args)
    save_model(model, out / "models" / f"{key.feature_name}__{key.class_name}.tsv")
    print(f"trained {key} with {len(model.members)} members -> {out}")
    return 0


def cmd_score(args) -> int:
    corpus = load_corpus(args.corpus)
    model = load_model(args.model)
    table = corpus.load_feature(model.key.feature_name)
    if args.split in ("train", "val"):
        split = corpus.load_split()
        ids = sorted(split.train_ids if args.split == "train" else split.val_ids)
    else:
        ids = list(corpus.ids(args.split))
    if table.spec.level == "video":
        scores = [float(model.score(table.vector(v))) for v in ids]
    else:
        scores = []
        for vid in ids:
            frames = table.frames_of(vid)
            mat = np.vstack([table.vector((vid, f)) for f in frames])
            times = tuple(corpus.videos[vid].frame_times[f] for f in frames)
            series = FrameScoreSeries(video_id=vid, times=times, scores=model.score(mat))
            scores.append(aggregate(series, args.window))
    out = _out_dir(args)
    path = out / "scores" / args.split / f"{model.key.feature_name}__{model.key.class_name}.tsv"
    write_vector_table(ids, np.array(scores)[:, None], path)
    print(f"scored {len(ids)} {args.split} videos -> {path}")
    return 0


def _read_score_dir(directory: Path) -> tuple[list[ClassifierKey], list[str], np.ndarray]:
    files = sorted(directory.glob("*.tsv"))
    if not files:
        raise DataValidationError(f"no score files under {directory}")
    keys, columns = [], []
    ids = None
    for path in files:
        stem = path.stem
        feature, sep, cls = stem.partition("__")
        if not sep:
            raise DataValidationError(f"score file {path.name} is not <feature>__<class>.tsv")
        keys.append(ClassifierKey(feature, cls))
        dim, raw_keys, values = corpus_mod.read_vector_table(path)
        if dim != 1:
            raise DataValidationError(f"{path}: score files must have dim 1")
        if ids is None:
            ids = raw_keys
        elif raw_keys != ids:
            raise DataValidationError(f"{path}: video ids disagree with {files[0].name}")
        columns.append(values[:, 0])
    return keys, ids, np.column_stack(columns)


def cmd_fuse(args) -> int:
    corpus = load_corpus(args.corpus)
    scores_root = Path(args.scores)
    keys, val_ids, val_matrix = _read_score_dir(scores_root / "val")
    labels = corpus.labels
    val_rel = np.array([labels.is_violent(v) for v in val_ids], dtype=bool)
    if args.mode == "learn":
        fusion = learn_weights(keys, val_matrix, val_rel, FusionConfig())
    else:
        fusion = uniform_fusion(keys, val_matrix, val_rel)
    out = _out_dir(args)
    save_fusion(fusion, out / "fusion.tsv")
    col_of = {key: i for i, key in enumerate(keys)}
    reorder = [col_of[k] for k in fusion.keys]
    fused_val = val_matrix[:, reorder] @ fusion.weights
    write_vector_table(val_ids, fused_val[:, None], out / "scores" / "fused_val.tsv")
    test_dir = scores_root / "test"
    if test_dir.is_dir():
        test_keys, test_ids, test_matrix = _read_score_dir(test_dir)
        if test_keys != keys:
            raise DataValidationError("val and test score directories hold different classifiers")
        fused_test = test_matrix[:, reorder] @ fusion.weights
        write_vector_table(test_ids, fused_test[:, None], out / "scores" / "fused_test.tsv")
    print(f"fusion mode {fusion.mode}: val AP {fusion.val_ap_achieved:.4f} -> {out}")
    return 0


def cmd_eval(args) -> int:
    corpus = load_corpus(args.corpus)
    dim, ids, values = corpus_mod.read_vector_table(args.scores)
    if dim != 1:
        raise DataValidationError(f"{args.scores}: fused score files must have dim 1")
    labels = corpus.labels
    report = evaluate(
        dict(zip(ids, values[:, 0])),
        {v: labels.is_violent(v) for v in ids},
        run_id=args.run_id,
    )
    out = _out_dir(args)
    name = args.name or Path(args.scores).stem
    save_report(report, out / "reports" / f"{name}.json")
    print(f"AP {report.ap:.4f}  P10 {report.p10:.4f}  P100 {report.p100:.4f} -> {out}")
    return 0


def cmd_experiment(args) -> int:
    corpus = load_corpus(args.corpus)
    overrides = _load_config_file(args.config)
    if args.preset:
        features = run_preset(args.preset)
    elif args.features:
        features = tuple(args.features.split(","))
    elif "features" in overrides:
        features = tuple(overrides["features"])
    else:
        raise ConfigError("experiment needs --preset, --features or a config with features")
    overrides["features"] = features
    if args.subclass_mode:
        overrides["subclass_mode"] = args.subclass_mode
    if args.fusion_mode:
        overrides["fusion_mode"] = args.fusion_mode
    overrides["seed"] = args.seed
    if args.workers != 1:
        overrides["workers"] = args.workers
    if args.window is not None:
        overrides["temporal_window"] = args.window
    config = from_dict(overrides)
    out = _out_dir(args)
    result = run_experiment(corpus, config, out_dir=out)
    label = args.preset or ",".join(config.features[:3]) + ("..." if len(config.features) > 3 else "")
    row = (
        f"{label} [{config.subclass_mode}/{config.weighting}]",
        {
            "val_ap": result.reports["val"].ap,
            "val_p10": result.reports["val"].p10,
            "test_ap": result.reports["test"].ap,
            "test_p10": result.reports["test"].p10,
        },
    )
    table = emit_table([row], groups=(("val", ("val_ap", "val_p10")), ("test", ("test_ap", "test_p10"))))
    atomic_write_text(out / "table.txt", table)
    print(table, end="")
    return 0


def cmd_divergence(args) -> int:
    corpus = load_corpus(args.corpus)
    rates = {}
    for split in ("dev", "test"):
        ids = corpus.ids(split)
        rates[split] = occurrence_rates(corpus.labels, corpus.vocab, ids)
    l1 = divergence(rates["dev"], rates["test"])
    payload = {
        "vocabulary": list(corpus.vocab.names),
        "occurrence_dev": [float(r) for r in rates["dev"]],
        "occurrence_test": [float(r) for r in rates["test"]],
        "l1_divergence": l1,
    }
    out = _out_dir(args)
    atomic_write_text(out / "divergence.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"L1 divergence between dev and test occurrence rates: {l1:.4f}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="JSON file with stage parameters")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--preset", choices=synth_mod.PRESET_NAMES)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit-codebook", help="fit a kmeans codebook or GMM on descriptors")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--model", choices=("kmeans", "gmm"), default="kmeans")
    p.add_argument("--name", help="basename for the output file")
    common(p)
    p.set_defaults(func=cmd_fit_codebook)

    p = sub.add_parser("encode", help="encode descriptors (bow/fv) or pool frame features")
    p.add_argument("--method", choices=("bow", "fv", "avgpool"), required=True)
    p.add_argument("--descriptors")
    p.add_argument("--codebook")
    p.add_argument("--feature-name")
    p.add_argument("--corpus")
    p.add_argument("--feature")
    common(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train one (feature, class) ensemble")
    p.add_argument("--corpus", required=True)
    p.add_argument("--feature", required=True)
    p.add_argument("--class", required=True)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a split with a trained model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "val", "dev", "test"), default="test")
    p.add_argument("--window", type=int, default=5)
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("fuse", help="fit fusion weights from per-classifier score files")
    p.add_argument("--corpus", required=True)
    p.add_argument("--scores", required=True, help="directory holding val/ (and optionally test/) score files")
    p.add_argument("--mode", choices=("avg", "learn"), default="avg")
    common(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="evaluate a fused score file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--run-id", default="")
    p.add_argument("--name")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="full train/fuse/eval run")
    p.add_argument("--corpus", required=True)
    p.add_argument("--preset", help="one of the table3-row presets")
    p.add_argument("--features", help="comma-separated feature names")
    p.add_argument("--subclass-mode", choices=("none", "avg", "learn"))
    p.add_argument("--fusion-mode", choices=("avg", "learn"))
    p.add_argument("--window", type=int)
    p.add_argument("--workers", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("divergence", help="dev/test subclass occurrence rates and their L1 distance")
    p.add_argument("--corpus", required=True)
    common(p)
    p.set_defaults(func=cmd_divergence)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DegenerateLabelsError as exc:
        print(f"degenerate labels: {exc}", file=sys.stderr)
        return 4
    except DataValidationError as exc:
        print(f"data validation error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data validation error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
