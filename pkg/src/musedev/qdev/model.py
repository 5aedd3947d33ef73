"""Rating records, the trained deviation-rating model, and JSON persistence."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from musedev.features import FEATURE_NAMES, FeatureDeviationVector
from musedev.qdev.estimators import MODEL_KINDS, check_matrix

RATING_MIN = 0.0
RATING_MAX = 5.0
MODEL_FILE_VERSION = 1


class ModelFormatError(ValueError):
    """Raised when a model file is corrupt or structurally invalid."""


class ModelVersionError(ModelFormatError):
    """Raised when a model file carries an unsupported version."""


@dataclass(frozen=True)
class RatingRecord:
    pair_id: str
    features: FeatureDeviationVector
    rating: float

    def __post_init__(self):
        if not (RATING_MIN <= self.rating <= RATING_MAX):
            raise ValueError(f"rating {self.rating} outside [{RATING_MIN}, {RATING_MAX}]")
        if not np.all(np.isfinite(self.features.as_array())):
            raise ValueError("features must be finite")


def records_to_arrays(records, feature_mask=FEATURE_NAMES):
    """(X, y) with X restricted to the masked feature columns."""
    idx = [FEATURE_NAMES.index(name) for name in feature_mask]
    X = np.array([rec.features.as_array()[idx] for rec in records])
    y = np.array([rec.rating for rec in records])
    return X, y


@dataclass
class QDevModel:
    """A fitted regressor plus the feature subset and training provenance."""

    kind: str
    feature_mask: tuple
    estimator: object
    training_meta: dict = field(default_factory=dict)

    def predict_vector(self, features: FeatureDeviationVector) -> float:
        return float(self.predict_matrix(features.as_array()[None, :])[0])

    def predict_matrix(self, X) -> np.ndarray:
        """Predictions for rows of full (d_p, d_r, d_t, d_l) vectors, clamped to [0, 5]."""
        X = check_matrix(X)
        if X.shape[1] == len(FEATURE_NAMES):
            idx = [FEATURE_NAMES.index(name) for name in self.feature_mask]
            X = X[:, idx]
        elif X.shape[1] != len(self.feature_mask):
            raise ValueError(
                f"feature mask mismatch: model uses {self.feature_mask}, got {X.shape[1]} columns"
            )
        return np.clip(self.estimator.predict(X), RATING_MIN, RATING_MAX)


def train(records, kind: str, hyperparams: dict | None = None, seed: int = 0,
          feature_mask=FEATURE_NAMES) -> QDevModel:
    """Fit a model of the requested kind on (features -> rating). Deterministic per seed."""
    records = list(records)
    if len(records) < 2:
        raise ValueError(f"need at least 2 rating records, got {len(records)}")
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}")
    if not feature_mask:
        raise ValueError("feature_mask cannot be empty")
    params = dict(hyperparams or {})
    params.setdefault("seed", seed)
    estimator = MODEL_KINDS[kind](**params)
    X, y = records_to_arrays(records, feature_mask)
    estimator.fit(X, y)
    meta = {"samples": len(records), "seed": seed, "version": MODEL_FILE_VERSION}
    return QDevModel(kind, tuple(feature_mask), estimator, meta)


def predict(model: QDevModel, features: FeatureDeviationVector) -> float:
    """The model's deviation rating for one feature vector, in [0, 5]."""
    return model.predict_vector(features)


def save_model(model: QDevModel, path) -> None:
    doc = {
        "version": MODEL_FILE_VERSION,
        "kind": model.kind,
        "feature_mask": list(model.feature_mask),
        "hyperparams": model.estimator.get_params(),
        "params": model.estimator.to_dict(),
        "meta": model.training_meta,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path) -> QDevModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: not a valid model file ({exc})") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise ModelFormatError(f"{path}: missing version field")
    if doc["version"] != MODEL_FILE_VERSION:
        raise ModelVersionError(
            f"{path}: version {doc['version']} unsupported (expected {MODEL_FILE_VERSION})"
        )
    try:
        kind = doc["kind"]
        cls = MODEL_KINDS[kind]
        estimator = cls.from_dict(doc["params"], doc["hyperparams"])
        mask = tuple(doc["feature_mask"])
        meta = doc.get("meta", {})
    except (KeyError, TypeError, IndexError) as exc:
        raise ModelFormatError(f"{path}: malformed model document ({exc})") from exc
    return QDevModel(kind, mask, estimator, meta)
