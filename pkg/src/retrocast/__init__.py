"""Retrieval-augmented linear forecasting for multivariate time series.

The forecaster pairs an offset-anchored linear map over the look-back
window with continuations retrieved from the training history: sliding
key/value patches are scored against the query at several pooling
periods, the top matches are softmax-weighted into an aggregate, and
per-period linear heads fuse that aggregate with the direct forecast.
"""

from .cache import (
    CacheMismatchError,
    RetrievalCache,
    make_fingerprint,
    patches_for_starts,
    precompute,
)
from .config import VARIANTS, ExperimentConfig
from .harness import (
    DiagnosticsResult,
    GridResult,
    GridSpace,
    MetricReport,
    PreparedData,
    RunResult,
    default_horizons,
    diagnostics,
    eval_starts_for_annotations,
    evaluate,
    grid_search,
    prepare_dataset,
    rare_pattern_study,
    resolve_split,
    run_ablation,
    run_single,
    similarity_study,
    stride_study,
    training_length_study,
    tuned_config,
)
from .metrics import average_ranks, mae, mse, spearman
from .model import (
    ForecastModel,
    TrainConfig,
    TrainHistory,
    TrainingDivergedError,
    TrainSample,
    batch_gradients,
    batch_loss,
    forward,
    init_model,
    load_checkpoint,
    loss,
    predict,
    predict_windows,
    save_checkpoint,
    train,
)
from .retrieval import (
    METRIC_KINDS,
    ExclusionRule,
    PatchIndex,
    RetrievalParams,
    RetrievalResult,
    ScoreSet,
    SimilarityMetric,
    admissible_mask,
    build_index,
    perform_retrieval,
    random_retrieve,
    retrieve,
    score_all,
    similarity,
    softmax_weights,
    top_m,
)
from .series import (
    AnchoredPatch,
    ChannelStats,
    CsvSchema,
    Patch,
    SplitSpec,
    SplitView,
    TimeSeries,
    apply_standardize,
    downsample,
    fit_standardize,
    load_csv,
    select_channels,
    sliding_windows,
    split,
    subtract_offset,
    write_csv,
)
from .synthetic import (
    PATTERN_KINDS,
    PatternAnnotation,
    SyntheticSpec,
    assemble,
    gen_ar_pattern,
    gen_background,
    gen_rw_pattern,
    read_annotations,
    write_annotations,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # series
    "TimeSeries", "CsvSchema", "load_csv", "write_csv", "select_channels",
    "SplitSpec", "SplitView", "split", "ChannelStats", "fit_standardize",
    "apply_standardize", "Patch", "AnchoredPatch", "subtract_offset",
    "downsample", "sliding_windows",
    # retrieval
    "METRIC_KINDS", "SimilarityMetric", "ExclusionRule", "PatchIndex",
    "build_index", "similarity", "score_all", "ScoreSet", "admissible_mask",
    "top_m", "softmax_weights", "RetrievalParams", "RetrievalResult",
    "retrieve", "random_retrieve", "perform_retrieval",
    # cache
    "RetrievalCache", "CacheMismatchError", "make_fingerprint",
    "patches_for_starts", "precompute",
    # model
    "ForecastModel", "init_model", "forward", "predict", "predict_windows",
    "loss", "TrainSample", "batch_loss", "batch_gradients", "TrainConfig",
    "TrainHistory", "TrainingDivergedError", "train", "save_checkpoint",
    "load_checkpoint",
    # metrics
    "mse", "mae", "average_ranks", "spearman",
    # synthetic
    "PATTERN_KINDS", "SyntheticSpec", "PatternAnnotation", "gen_background",
    "gen_ar_pattern", "gen_rw_pattern", "assemble", "write_annotations",
    "read_annotations",
    # config + harness
    "ExperimentConfig", "VARIANTS", "PreparedData", "RunResult",
    "MetricReport", "GridSpace", "GridResult", "DiagnosticsResult",
    "resolve_split", "tuned_config", "default_horizons", "prepare_dataset",
    "run_single", "evaluate", "grid_search", "run_ablation", "stride_study",
    "similarity_study", "training_length_study", "diagnostics",
    "rare_pattern_study", "eval_starts_for_annotations",
]
