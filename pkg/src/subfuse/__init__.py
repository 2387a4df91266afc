"""subfuse: subclass-decomposed late fusion for video concept detection.

The pipeline: encode descriptors into fixed-dimension features, train one
hard-negative-bootstrapped linear ensemble per (feature, class) pair,
collapse frame scores to video scores, fuse the normalized classifier
scores with uniform or learned weights, and evaluate the ranking with
AP / P10 / P100.  A synthetic corpus generator reproduces dev/test
subclass-distribution shift at desk scale.
"""

from .corpus import (
    BUILTIN_FEATURES,
    Corpus,
    FeatureSpec,
    FeatureTable,
    LabelStore,
    SplitAssignment,
    SubclassVocabulary,
    VideoRecord,
    cooccurrence_matrix,
    divergence,
    load_annotations,
    load_corpus,
    load_features,
    make_split,
    occurrence_rates,
    select_subclasses,
    write_annotations,
    write_features,
)
from .encode import (
    Codebook,
    DescriptorSet,
    GmmModel,
    avg_pool,
    encode_bow,
    encode_fv,
    fit_codebook,
    fit_gmm,
    validate_dims,
)
from .errors import ConfigError, DataValidationError, DegenerateLabelsError
from .experiment import RunConfig, RunResult, emit_table, parse_table, run_experiment
from .fuse import (
    FusionConfig,
    FusionModel,
    assemble_bank,
    fuse_scores,
    learn_weights,
    uniform_fusion,
)
from .learn import (
    ClassifierKey,
    EnsembleModel,
    LinearModel,
    TrainConfig,
    negative_bootstrap,
    normalize_scores,
    train_linear,
)
from .metrics import (
    EvalReport,
    ScoredRanking,
    average_precision,
    evaluate,
    make_ranking,
    precision_at,
)
from .synth import GeneratorConfig, SyntheticCorpus, generate, make_imbalanced, preset
from .temporal import FrameScoreSeries, max_response, smooth

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_FEATURES",
    "ClassifierKey",
    "Codebook",
    "ConfigError",
    "Corpus",
    "DataValidationError",
    "DegenerateLabelsError",
    "DescriptorSet",
    "EnsembleModel",
    "EvalReport",
    "FeatureSpec",
    "FeatureTable",
    "FrameScoreSeries",
    "FusionConfig",
    "FusionModel",
    "GeneratorConfig",
    "GmmModel",
    "LabelStore",
    "LinearModel",
    "RunConfig",
    "RunResult",
    "ScoredRanking",
    "SplitAssignment",
    "SubclassVocabulary",
    "SyntheticCorpus",
    "TrainConfig",
    "VideoRecord",
    "assemble_bank",
    "average_precision",
    "avg_pool",
    "cooccurrence_matrix",
    "divergence",
    "emit_table",
    "encode_bow",
    "encode_fv",
    "evaluate",
    "fit_codebook",
    "fit_gmm",
    "fuse_scores",
    "generate",
    "learn_weights",
    "load_annotations",
    "load_corpus",
    "load_features",
    "make_imbalanced",
    "make_ranking",
    "make_split",
    "max_response",
    "negative_bootstrap",
    "normalize_scores",
    "occurrence_rates",
    "parse_table",
    "precision_at",
    "preset",
    "run_experiment",
    "select_subclasses",
    "smooth",
    "train_linear",
    "uniform_fusion",
    "validate_dims",
    "write_annotations",
    "write_features",
]
