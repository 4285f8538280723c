"""Variance correction for low-rank basis kernels.

A learned basis kernel puts prior variance k(x, x) = ||phi(x)||^2 on each
point, so regions where the feature norm collapses get overconfident
posteriors. The remedy has two halves:

* during training, a trace penalty tr(C)/(2 sigma^2) pushes the feature
  norms toward a uniform prior variance, where c(x, x) is the gap between
  the largest prior variance over the training set and the point's own;
* at prediction, the same gap is folded into a heteroscedastic noise
  sigma_hat^2(x) = sigma^2 + c(x, x), which restores prior-level
  uncertainty away from the data while keeping all solves r x r.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg


@dataclass
class CorrectionStats:
    """Summary of training feature norms needed at prediction time.

    Only train_max_sq_norm is persisted; the per-point cache exists for
    in-memory reuse during fitting.
    """

    train_max_sq_norm: float
    per_point_c: np.ndarray | None = None


def sq_norms(phi) -> np.ndarray:
    """Row-wise squared norms ||phi_i||^2, i.e. the kernel diagonal."""
    phi = np.asarray(phi, dtype=np.float64)
    return np.einsum("ij,ij->i", phi, phi)


def fit_correction_stats(phi) -> CorrectionStats:
    s = sq_norms(phi)
    smax = float(np.max(s))
    return CorrectionStats(train_max_sq_norm=smax, per_point_c=smax - s)


def trace_penalty_full(phi, noise_var: float) -> float:
    """tr(C) / (2 sigma^2) with tr(C) = sum_i [max_j ||phi_j||^2 - ||phi_i||^2]."""
    s = sq_norms(phi)
    trace = s.size * float(np.max(s)) - float(np.sum(s))
    return trace / (2.0 * noise_var)


def trace_penalty_batch(batch_phi, n_total: int, noise_var: float) -> float:
    """Stochastic trace penalty: batch max stands in for the global max."""
    b = np.asarray(batch_phi).shape[0]
    return (n_total / b) * trace_penalty_full(batch_phi, noise_var)


def penalty_cotangent(phi, noise_var: float):
    """Subgradient of trace_penalty_full w.r.t. phi, plus d/d(sigma^2).

    With s_i = ||phi_i||^2 and i* the first argmax, d tr(C)/d s_{i*} is
    n - 1 and every other row gets -1; ties resolve to the first index.
    Rows chain through d s_i / d phi_i = 2 phi_i.
    """
    phi = np.asarray(phi, dtype=np.float64)
    n = phi.shape[0]
    s = sq_norms(phi)
    coef = np.full(n, -1.0)
    coef[int(np.argmax(s))] = n - 1.0
    cot = (coef / noise_var)[:, None] * phi
    trace = n * float(np.max(s)) - float(np.sum(s))
    d_noise = -trace / (2.0 * noise_var**2)
    return cot, d_noise


def corrected_noise(stats: CorrectionStats, phi_star, noise_var: float) -> float:
    """sigma_hat^2(x*) = sigma^2 + c(x*, x*), never below sigma^2.

    The max defining c runs over the training set and the test point
    itself, so a test point with a larger feature norm than anything seen
    in training gets c = 0 rather than a negative correction.
    """
    s = float(np.dot(phi_star, phi_star))
    return noise_var + max(stats.train_max_sq_norm, s) - s


def corrected_noise_many(stats: CorrectionStats, star_sq_norms, noise_var: float):
    s = np.asarray(star_sq_norms, dtype=np.float64)
    return noise_var + np.maximum(stats.train_max_sq_norm, s) - s


def weighted_cache(phi_train, y, noise_var: float, stats: CorrectionStats):
    """Factor the noise-rescaled normal equations once.

    Scales each training row by sigma / sigma_hat(x_i) and returns the
    Cholesky factor of Lambda_hat = Phi^T D^-1 Phi + sigma^2 I together
    with Lambda_hat^-1 Phi^T D^-1 y, the two quantities every corrected
    prediction needs.
    """
    phi_train = np.asarray(phi_train, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    s = sq_norms(phi_train)
    hetero = corrected_noise_many(stats, s, noise_var)
    inv_sqrt_d = np.sqrt(noise_var / hetero)
    phi_hat = phi_train * inv_sqrt_d[:, None]
    y_hat = y * inv_sqrt_d
    gram = phi_hat.T @ phi_hat
    lam = 0.5 * (gram + gram.T) + noise_var * np.eye(phi_train.shape[1])
    factor = linalg.cholesky(lam)
    projected = linalg.solve_posdef(factor, phi_hat.T @ y_hat)
    return factor, projected


def predict_corrected(phi_train, y, noise_var: float, stats: CorrectionStats, phi_star):
    """Corrected posterior mean and variance at test features phi_star.

    Equivalent to the dense heteroscedastic posterior with per-point
    noise sigma_hat^2(x_i) on the training diagonal, but computed with
    r x r factorizations only.
    """
    phi_star = np.atleast_2d(np.asarray(phi_star, dtype=np.float64))
    factor, projected = weighted_cache(phi_train, y, noise_var, stats)
    mean = phi_star @ projected
    half = linalg.solve_triangular(factor, phi_star.T)
    star_noise = corrected_noise_many(stats, sq_norms(phi_star), noise_var)
    variance = noise_var * np.einsum("ij,ij->j", half, half) + star_noise
    return mean, variance
