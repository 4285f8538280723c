"""Per-point Gaussian predictive distributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PredictiveDistribution:
    """Independent Gaussian predictions: mean and variance per test point."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.variance = np.atleast_1d(np.asarray(self.variance, dtype=np.float64))


def pointwise_nll(pred: PredictiveDistribution, targets) -> np.ndarray:
    """-log N(y_i; mu_i, v_i) per point."""
    y = np.asarray(targets, dtype=np.float64)
    resid = y - pred.mean
    return 0.5 * np.log(2.0 * np.pi * pred.variance) + resid**2 / (2.0 * pred.variance)


def mean_nll(pred: PredictiveDistribution, targets) -> float:
    return float(np.mean(pointwise_nll(pred, targets)))
