"""Deviation-rating regression: training, evaluation, selection, persistence."""

from musedev.qdev.analysis import (
    ConstantMeasureError,
    EvalReport,
    cross_val_mse,
    evaluate,
    model_selection,
    oat_sensitivity,
    spearman,
    spearman_of_measure,
)
from musedev.qdev.estimators import MODEL_KINDS
from musedev.qdev.model import (
    ModelFormatError,
    ModelVersionError,
    QDevModel,
    RatingRecord,
    load_model,
    predict,
    save_model,
    train,
)
from musedev.qdev.synthetic import synthetic_rating, synthetic_records

__all__ = [
    "ConstantMeasureError",
    "EvalReport",
    "MODEL_KINDS",
    "ModelFormatError",
    "ModelVersionError",
    "QDevModel",
    "RatingRecord",
    "cross_val_mse",
    "evaluate",
    "load_model",
    "model_selection",
    "oat_sensitivity",
    "predict",
    "save_model",
    "spearman",
    "spearman_of_measure",
    "synthetic_rating",
    "synthetic_records",
    "train",
]
