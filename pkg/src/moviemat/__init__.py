"""Context-aware recommendation by matrix fitting.

Each observed rating becomes a small target matrix carrying the normalized
rating on its diagonal and normalized context values off it; user and item
factor blocks are fitted by seeded SGD so their product matches the
targets. Includes a classic matrix-factorization baseline (k=1), MAE/RMSE
accuracy metrics, a popularity-fairness metric, learning-rate grid search,
and a reproducible experiment CLI.
"""

from .dataset import (
    ContextField,
    ContextSchema,
    DataError,
    Dataset,
    DatasetStats,
    RatingRecord,
    dataset_from_records,
    dataset_stats,
    default_comoda_schema,
    load_dataset,
    load_schema,
    split_train_test,
)
from .model import (
    FactorModel,
    ModelVariant,
    TargetMatrix,
    VARIANT_NAMES,
    build_target,
    init_model,
    load_model,
    predict_context,
    predict_rating,
    predict_target,
    save_model,
)
from .trainer import (
    DivergenceError,
    GridPointResult,
    TrainConfig,
    TrainTrace,
    grid_search,
    loss,
    sgd_step,
    train,
)
from .metrics import (
    MetricsReport,
    degree_of_matthew_effect,
    evaluate,
    mae,
    rmse,
)

__version__ = "0.1.0"

__all__ = [
    "ContextField",
    "ContextSchema",
    "DataError",
    "Dataset",
    "DatasetStats",
    "RatingRecord",
    "dataset_from_records",
    "dataset_stats",
    "default_comoda_schema",
    "load_dataset",
    "load_schema",
    "split_train_test",
    "FactorModel",
    "ModelVariant",
    "TargetMatrix",
    "VARIANT_NAMES",
    "build_target",
    "init_model",
    "load_model",
    "predict_context",
    "predict_rating",
    "predict_target",
    "save_model",
    "DivergenceError",
    "GridPointResult",
    "TrainConfig",
    "TrainTrace",
    "grid_search",
    "loss",
    "sgd_step",
    "train",
    "MetricsReport",
    "degree_of_matthew_effect",
    "evaluate",
    "mae",
    "rmse",
    "__version__",
]
