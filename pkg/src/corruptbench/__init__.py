"""Deterministic corruption-robustness benchmark for image features."""

from .augment import AugmentationSpec, AugmentKind, apply_augmentation, resize_bilinear
from .corruptions import (
    CorruptionKind,
    CorruptionSpec,
    PatchScope,
    Permutation,
    apply_corruption,
    gamma_distort,
    gamma_lut,
    global_patch_shuffle,
    local_pixel_shuffle,
    longtail_subsample,
    make_patch_permutation,
    substitute_dataset,
    uniform_subsample,
)
from .datasets import (
    ClassProfile,
    EmbeddingSet,
    LabeledDataset,
    l2_normalize,
    read_cifar_binary,
    read_embeddings,
    read_image_dir,
    write_embeddings,
    write_image_dir,
)
from .errors import BenchError, ConfigError, DataError, NumericError
from .evaluation import (
    AccuracyResult,
    KnnConfig,
    LinearModel,
    LinearProbeConfig,
    evaluate_linear,
    format_delta_percent,
    knn_predict,
    relative_drop,
    train_linear_probe,
)
from .harness import (
    ExperimentConfig,
    GridEntry,
    MetricsReport,
    ReportRow,
    TestMode,
    parse_experiment,
    run_experiment,
)
from .metrics import (
    CheckpointSeries,
    UniformityEstimate,
    class_accuracy_fluctuation,
    feature_distance,
    uniformity,
)
from .pipeline import (
    PipelineMode,
    TransformPipeline,
    apply_pipeline,
    pipeline_from_text,
    pipeline_to_text,
)
from .probe import MlpModel, TrainConfig, TrainResult, embed_dataset, loss_and_grad, train

__version__ = "0.1.0"

__all__ = [
    "AccuracyResult",
    "AugmentKind",
    "AugmentationSpec",
    "BenchError",
    "CheckpointSeries",
    "ClassProfile",
    "ConfigError",
    "CorruptionKind",
    "CorruptionSpec",
    "DataError",
    "EmbeddingSet",
    "ExperimentConfig",
    "GridEntry",
    "KnnConfig",
    "LabeledDataset",
    "LinearModel",
    "LinearProbeConfig",
    "MetricsReport",
    "MlpModel",
    "NumericError",
    "PatchScope",
    "Permutation",
    "PipelineMode",
    "ReportRow",
    "TestMode",
    "TrainConfig",
    "TrainResult",
    "TransformPipeline",
    "UniformityEstimate",
    "apply_augmentation",
    "apply_corruption",
    "apply_pipeline",
    "class_accuracy_fluctuation",
    "embed_dataset",
    "evaluate_linear",
    "feature_distance",
    "format_delta_percent",
    "gamma_distort",
    "gamma_lut",
    "global_patch_shuffle",
    "knn_predict",
    "l2_normalize",
    "local_pixel_shuffle",
    "longtail_subsample",
    "loss_and_grad",
    "make_patch_permutation",
    "parse_experiment",
    "pipeline_from_text",
    "pipeline_to_text",
    "read_cifar_binary",
    "read_embeddings",
    "read_image_dir",
    "relative_drop",
    "resize_bilinear",
    "run_experiment",
    "substitute_dataset",
    "train",
    "train_linear_probe",
    "uniform_subsample",
    "uniformity",
    "write_embeddings",
    "write_image_dir",
]
