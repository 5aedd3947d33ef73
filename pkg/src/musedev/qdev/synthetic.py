"""Deterministic stand-in rater for CI and experiments.

Real ratings come from the study server; this module maps feature deviation
vectors to ratings through fixed logistic squashings with loudness carrying
the largest weight, plus seeded observation noise.
"""
from __future__ import annotations

import numpy as np

from musedev.features import FeatureDeviationVector
from musedev.qdev.model import RatingRecord

# (weight, scale) per component: d_p, d_r, d_t, d_l
RATER_WEIGHTS = ((0.25, 10.0), (0.2, 10.0), (0.25, 10000.0), (0.3, 1500.0))
DEFAULT_NOISE_STD = 0.1


def _squash(x):
    return 1.0 / (1.0 + np.exp(-x))


def synthetic_rating(features: FeatureDeviationVector, noise: float = 0.0) -> float:
    """Noise-free value plus the caller-supplied noise term, clamped to [0, 5]."""
    total = sum(w * _squash(d / s) for (w, s), d in zip(RATER_WEIGHTS, features.as_array()))
    return float(np.clip(5.0 * total + noise, 0.0, 5.0))


def sample_feature_vector(rng: np.random.Generator) -> FeatureDeviationVector:
    """Feature draws spanning the ranges the pipelines produce: pitch and
    rhythm in 0..50 (and often exactly zero, as note-based perturbations leave
    the contour alone), timbre and loudness up to tens of thousands; an
    occasional all-zero vector stands in for identical pairs."""
    if rng.random() < 0.08:
        return FeatureDeviationVector(0.0, 0.0, 0.0, 0.0)
    d_p = 50.0 * rng.beta(1.2, 3.0) * (rng.random() < 0.7)
    d_r = 50.0 * rng.beta(1.2, 3.0) * (rng.random() < 0.7)
    d_t = 40000.0 * rng.beta(1.2, 3.0)
    d_l = 9000.0 * rng.beta(1.2, 3.0)
    return FeatureDeviationVector(d_p, d_r, d_t, d_l)


def synthetic_records(n: int, seed: int = 0, noise_std: float = DEFAULT_NOISE_STD):
    """n seeded RatingRecords from the synthetic rater."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        vec = sample_feature_vector(rng)
        rating = synthetic_rating(vec, rng.normal(0.0, noise_std))
        records.append(RatingRecord(f"synthetic-{i:05d}", vec, rating))
    return records
