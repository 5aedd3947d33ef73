"""Model evaluation: MSE, rank correlation, cross-validated selection, and
one-at-a-time feature sensitivity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from musedev.features import FEATURE_NAMES
from musedev.qdev.model import QDevModel, records_to_arrays, train


class ConstantMeasureError(ValueError):
    """Raised when rank correlation is requested for a constant sequence."""


@dataclass(frozen=True)
class EvalReport:
    mse: float
    spearman: float
    per_record_residuals: np.ndarray


def average_ranks(values) -> np.ndarray:
    """Ranks starting at 1, ties receiving the average of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Spearman rank correlation with average-rank tie handling."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("need two equal-length 1-D sequences of length >= 2")
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        raise ConstantMeasureError("rank correlation undefined for a constant sequence")
    ra = average_ranks(a)
    rb = average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    return float(ra @ rb / np.sqrt((ra @ ra) * (rb @ rb)))


def evaluate(model: QDevModel, records) -> EvalReport:
    """MSE and rank correlation of the model's predictions against the ratings."""
    records = list(records)
    if not records:
        raise ValueError("no records to evaluate")
    X = np.array([rec.features.as_array() for rec in records])
    y = np.array([rec.rating for rec in records])
    preds = model.predict_matrix(X)
    residuals = preds - y
    try:
        rho = spearman(preds, y)
    except ConstantMeasureError:
        rho = 0.0  # constant predictor or constant targets: no monotone signal
    return EvalReport(float(np.mean(residuals**2)), rho, residuals)


def _fold_indices(n: int, folds: int, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    return np.array_split(order, folds)


def cross_val_mse(records, kind: str, seed: int = 0, folds: int = 5,
                  hyperparams: dict | None = None, feature_mask=FEATURE_NAMES) -> float:
    """k-fold cross-validated MSE, pooled over all held-out residuals."""
    records = list(records)
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if len(records) < folds:
        raise ValueError(f"need at least {folds} records for {folds}-fold CV")
    splits = _fold_indices(len(records), folds, seed)
    squared = []
    for fold in splits:
        heldout = set(fold.tolist())
        train_recs = [rec for i, rec in enumerate(records) if i not in heldout]
        val_recs = [records[i] for i in fold]
        model = train(train_recs, kind, hyperparams, seed=seed, feature_mask=feature_mask)
        X, y = records_to_arrays(val_recs)
        preds = model.predict_matrix(X)
        squared.extend(((preds - y) ** 2).tolist())
    return float(np.mean(squared))


def model_selection(records, kinds, seed: int = 0, folds: int = 5,
                    hyperparams: dict | None = None):
    """Cross-validate every kind, return (best model retrained on all data, MSE table)."""
    kinds = list(kinds)
    if not kinds:
        raise ValueError("no model kinds supplied")
    per_kind = dict(hyperparams or {})
    table = {}
    for kind in kinds:
        table[kind] = cross_val_mse(records, kind, seed, folds, per_kind.get(kind))
    best_kind = min(kinds, key=lambda k: table[k])
    best = train(records, best_kind, per_kind.get(best_kind), seed=seed)
    return best, table


def spearman_of_measure(records, measure: str, model: QDevModel | None = None,
                        measure_values=None) -> float:
    """Rank correlation between a deviation measure and the stored ratings.

    measure 'qdev' uses the supplied model; 'l2'/'linf'/'snr' expect the
    precomputed per-record values (from lp_measures on the signal pairs);
    'rating' correlates the ratings with themselves.
    """
    records = list(records)
    ratings = np.array([rec.rating for rec in records])
    if measure == "qdev":
        if model is None:
            raise ValueError("measure 'qdev' requires a model")
        X = np.array([rec.features.as_array() for rec in records])
        values = model.predict_matrix(X)
    elif measure == "rating":
        values = ratings.copy()
    elif measure in ("l2", "linf", "snr"):
        if measure_values is None:
            raise ValueError(f"measure {measure!r} requires precomputed per-record values")
        values = np.asarray(measure_values, dtype=np.float64)
        if len(values) != len(records):
            raise ValueError("measure_values length does not match records")
    else:
        raise ValueError(f"unknown measure {measure!r}")
    return spearman(values, ratings)


def oat_sensitivity(records, kind: str, seed: int = 0, folds: int = 5,
                    hyperparams: dict | None = None) -> dict:
    """Cross-validated MSE with each feature excluded in turn, plus the
    all-features baseline under key 'all'."""
    records = list(records)
    if len(records) < 2:
        raise ValueError("need at least 2 records")
    table = {"all": cross_val_mse(records, kind, seed, folds, hyperparams)}
    for name in FEATURE_NAMES:
        mask = tuple(f for f in FEATURE_NAMES if f != name)
        table[name] = cross_val_mse(records, kind, seed, folds, hyperparams, feature_mask=mask)
    return table
