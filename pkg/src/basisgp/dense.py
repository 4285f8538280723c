"""Dense GP baseline with an RBF-ARD kernel.

This is the O(n^3) reference implementation: it serves both as a
comparison method (trained with the same Adam protocol as the low-rank
models) and as the brute-force oracle that the low-rank algebra is
tested against, via `lml_from_kernel` / `posterior_from_kernel`, which
accept an arbitrary injected kernel matrix.

Fits refuse datasets beyond a configurable size cap instead of
exhausting memory.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg.lapack import dpotri

from . import linalg, rng
from .config import TrainConfig
from .exact import NoiseParam
from .predictive import PredictiveDistribution, mean_nll
from .training import EarlyStopper, NonFiniteError, TrainResult


class DenseCapExceeded(Exception):
    """Training-set size exceeds the configured dense cap."""


@dataclass
class RbfArdParams:
    """k(a, b) = sigma_f^2 exp(-1/2 sum_j (a_j - b_j)^2 / l_j^2)."""

    log_lengthscales: np.ndarray
    log_outputscale: float
    noise: NoiseParam

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def outputscale(self) -> float:
        return math.exp(self.log_outputscale)

    @classmethod
    def default(cls, d: int, noise_var: float = 1e-2, floor: float = 1e-6):
        # lengthscales start at sqrt(d) to keep gradients alive in high d
        return cls(
            log_lengthscales=np.full(d, 0.5 * math.log(d)),
            log_outputscale=0.0,
            noise=NoiseParam.from_variance(noise_var, floor),
        )


@dataclass
class DenseState:
    params: RbfArdParams
    chol_sigma: linalg.CholeskyFactor
    alpha: np.ndarray
    train_x: np.ndarray


def _pairwise_sqdiff(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences, shape (n, m, d)."""
    return (x1[:, None, :] - x2[None, :, :]) ** 2


def rbf_ard(x1, x2, params: RbfArdParams) -> np.ndarray:
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape[1] != x2.shape[1]:
        raise linalg.DimensionMismatch(
            f"inputs have {x1.shape[1]} and {x2.shape[1]} columns"
        )
    d = x1.shape[1]
    if d != params.log_lengthscales.shape[0]:
        raise linalg.DimensionMismatch(
            f"params expect d={params.log_lengthscales.shape[0]}, inputs have d={d}"
        )
    sq = _pairwise_sqdiff(x1, x2) / params.lengthscales**2
    return params.outputscale * np.exp(-0.5 * np.sum(sq, axis=-1))


def lml_from_kernel(k_matrix, y, noise_var: float) -> float:
    """log N(y; 0, K + sigma^2 I) by dense Cholesky.

    The seam for oracle tests: inject K = Phi Phi^T here to check the
    low-rank likelihood against the O(n^3) computation.
    """
    k_matrix = np.asarray(k_matrix, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    sigma = k_matrix + noise_var * np.eye(n)
    factor = linalg.cholesky(sigma)
    alpha = linalg.solve_posdef(factor, y)
    return (
        -0.5 * n * math.log(2.0 * math.pi)
        - 0.5 * linalg.logdet(factor)
        - 0.5 * float(y @ alpha)
    )


def posterior_from_kernel(k_train, k_cross, k_star_diag, y, noise_var: float):
    """Dense posterior (mean, variance) from explicit kernel blocks.

    k_cross is n x m (train rows, test columns); variance includes the
    observation noise.
    """
    k_train = np.asarray(k_train, dtype=np.float64)
    k_cross = np.asarray(k_cross, dtype=np.float64)
    sigma = k_train + noise_var * np.eye(k_train.shape[0])
    factor = linalg.cholesky(sigma)
    alpha = linalg.solve_posdef(factor, np.asarray(y, dtype=np.float64))
    mean = k_cross.T @ alpha
    half = linalg.solve_triangular(factor, k_cross)
    variance = (
        np.asarray(k_star_diag, dtype=np.float64)
        - np.einsum("ij,ij->j", half, half)
        + noise_var
    )
    return mean, variance


def dense_lml(x, y, params: RbfArdParams) -> float:
    return lml_from_kernel(rbf_ard(x, x, params), y, params.noise.variance)


@dataclass
class DenseGradients:
    log_lengthscales: np.ndarray
    log_outputscale: float
    raw_noise: float


def _lml_and_grad_cached(sqdiff, y, params: RbfArdParams):
    """LML value and gradient using precomputed squared differences.

    Gradient is (1/2) tr((alpha alpha^T - Sigma^-1) dSigma/dtheta) with
    alpha = Sigma^-1 y; Sigma^-1 is materialized once per call via dpotri.
    """
    noise_var = params.noise.variance
    ell2 = params.lengthscales**2
    scaled = sqdiff / ell2
    k = params.outputscale * np.exp(-0.5 * np.sum(scaled, axis=-1))
    n = k.shape[0]
    sigma = k + noise_var * np.eye(n)
    factor = linalg.cholesky(sigma)
    alpha = linalg.solve_posdef(factor, y)
    value = (
        -0.5 * n * math.log(2.0 * math.pi)
        - 0.5 * linalg.logdet(factor)
        - 0.5 * float(y @ alpha)
    )
    inv, info = dpotri(factor.lower, lower=1)
    if info != 0:
        raise linalg.NotPositiveDefinite(f"dpotri failed with info={info}")
    sigma_inv = np.tril(inv) + np.tril(inv, -1).T
    q = np.outer(alpha, alpha) - sigma_inv
    g_ell = np.array(
        [0.5 * float(np.sum(q * k * scaled[:, :, j])) for j in range(scaled.shape[-1])]
    )
    g_out = 0.5 * float(np.sum(q * k))
    g_raw = 0.5 * float(np.trace(q)) * params.noise.dvariance_draw
    return value, DenseGradients(g_ell, g_out, g_raw)


def dense_lml_grad(x, y, params: RbfArdParams) -> DenseGradients:
    """Gradient of the LML over (log lengthscales, log outputscale, raw noise)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _, grads = _lml_and_grad_cached(_pairwise_sqdiff(x, x), y, params)
    return grads


def build_dense_state(x, y, params: RbfArdParams) -> DenseState:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sigma = rbf_ard(x, x, params) + params.noise.variance * np.eye(x.shape[0])
    factor = linalg.cholesky(sigma)
    return DenseState(
        params=params,
        chol_sigma=factor,
        alpha=linalg.solve_posdef(factor, y),
        train_x=x,
    )


def dense_posterior(state: DenseState, x_star) -> PredictiveDistribution:
    x_star = np.asarray(x_star, dtype=np.float64)
    k_cross = rbf_ard(state.train_x, x_star, state.params)
    mean = k_cross.T @ state.alpha
    half = linalg.solve_triangular(state.chol_sigma, k_cross)
    variance = (
        state.params.outputscale
        - np.einsum("ij,ij->j", half, half)
        + state.params.noise.variance
    )
    return PredictiveDistribution(mean=mean, variance=variance)


def fit_dense(data, config: TrainConfig, val_data=None, cap: int = 20000):
    """Adam ascent of the dense LML over the RBF-ARD hyperparameters.

    Same protocol as the low-rank trainers: validation NLL checkpoints
    every eval_every iterations, early stopping after `patience`
    iterations without improvement, best checkpoint returned.
    """
    from . import network  # Adam lives with the network utilities

    config.validate()
    x = np.asarray(data.x, dtype=np.float64)
    y = np.asarray(data.y, dtype=np.float64)
    n, d = x.shape
    if n == 0:
        raise ValueError("training data is empty")
    if n > cap:
        raise DenseCapExceeded(
            f"dense baseline refuses n={n} > cap={cap}; use a low-rank model"
        )
    if config.patience is not None and val_data is None:
        raise ValueError("early stopping requires validation data")

    sqdiff = _pairwise_sqdiff(x, x)
    params = RbfArdParams.default(
        d, noise_var=config.noise_var_init, floor=config.noise_var_floor
    )
    adam = network.adam_init(
        [params.log_lengthscales, np.zeros(1), np.zeros(1)],
        learning_rate=config.learning_rate,
        weight_decay=0.0,
    )
    decay_mask = [False, False, False]
    stopper = EarlyStopper(patience=config.patience)
    result = TrainResult()
    best = (params.log_lengthscales.copy(), params.log_outputscale, params.noise.raw)

    for iteration in range(1, config.max_iters + 1):
        step_start = time.perf_counter()
        value, grads = _lml_and_grad_cached(sqdiff, y, params)
        if not math.isfinite(value):
            raise NonFiniteError(iteration)
        plist = [
            params.log_lengthscales,
            np.array([params.log_outputscale]),
            np.array([params.noise.raw]),
        ]
        glist = [
            grads.log_lengthscales,
            np.array([grads.log_outputscale]),
            np.array([grads.raw_noise]),
        ]
        if not all(np.all(np.isfinite(g)) for g in glist):
            raise NonFiniteError(iteration, "gradient")
        if not config.learn_noise:
            glist[-1] = np.zeros(1)
        plist, adam = network.adam_step_arrays(
            adam, plist, glist, decay_mask, maximize=True
        )
        params = RbfArdParams(
            log_lengthscales=plist[0],
            log_outputscale=float(plist[1][0]),
            noise=NoiseParam(raw=float(plist[2][0]), floor=config.noise_var_floor),
        )
        result.step_time_s += time.perf_counter() - step_start
        result.step_count += 1

        record = {"iteration": iteration, "objective": value}
        if val_data is not None and iteration % config.eval_every == 0:
            state = build_dense_state(x, y, params)
            val_nll = mean_nll(dense_posterior(state, val_data.x), val_data.y)
            record["val_nll"] = val_nll
            if stopper.update(iteration, val_nll):
                best = (
                    params.log_lengthscales.copy(),
                    params.log_outputscale,
                    params.noise.raw,
                )
                record["best"] = True
            result.log.append(record)
            if stopper.should_stop(iteration):
                break
        else:
            result.log.append(record)

    if val_data is not None and stopper.best_step >= 0:
        params = RbfArdParams(
            log_lengthscales=best[0],
            log_outputscale=best[1],
            noise=NoiseParam(raw=best[2], floor=config.noise_var_floor),
        )
        result.best_iteration = stopper.best_step
        result.best_val_nll = stopper.best_value
    else:
        result.best_iteration = result.step_count

    return build_dense_state(x, y, params), result


def expected_lml(f_gt, noise_var: float, cov) -> float:
    """E[log N(y; 0, cov)] for y ~ N(f_gt, sigma^2 I).

    Expands to -n/2 log 2pi - 1/2 log|cov| - 1/2 f^T cov^-1 f
    - sigma^2/2 tr(cov^-1).
    """
    f = np.asarray(f_gt, dtype=np.float64)
    n = f.shape[0]
    factor = linalg.cholesky(np.asarray(cov, dtype=np.float64))
    cov_inv_f = linalg.solve_posdef(factor, f)
    inv_lower = linalg.solve_triangular(factor, np.eye(n))
    tr_inv = float(np.sum(inv_lower**2))
    return (
        -0.5 * n * math.log(2.0 * math.pi)
        - 0.5 * linalg.logdet(factor)
        - 0.5 * float(f @ cov_inv_f)
        - 0.5 * noise_var * tr_inv
    )


def expected_sq_error(f_gt, noise_var: float, cov) -> float:
    """E ||f_gt - E[f|y]||^2 for y ~ N(f_gt, sigma^2 I) at K = cov - sigma^2 I."""
    f = np.asarray(f_gt, dtype=np.float64)
    n = f.shape[0]
    cov = np.asarray(cov, dtype=np.float64)
    k = cov - noise_var * np.eye(n)
    factor = linalg.cholesky(cov)
    cov_inv_f = linalg.solve_posdef(factor, f)
    cov_inv_k = linalg.solve_posdef(factor, k)
    return noise_var**2 * float(cov_inv_f @ cov_inv_f) + noise_var * float(
        np.sum(cov_inv_k**2)
    )


def _max_directional_derivative(
    objective, base_cov, perturbation_scale: float, n_directions: int, seed: int
) -> float:
    stream = rng.substream(seed, "stationarity")
    n = base_cov.shape[0]
    worst = 0.0
    for _ in range(n_directions):
        direction = stream.normals(n * n).reshape(n, n)
        direction = 0.5 * (direction + direction.T)
        direction /= np.sqrt(np.sum(direction**2))
        up = objective(base_cov + perturbation_scale * direction)
        down = objective(base_cov - perturbation_scale * direction)
        worst = max(worst, abs(up - down) / (2.0 * perturbation_scale))
    return worst


def expected_lml_stationarity_check(
    f_gt,
    noise_var: float,
    perturbation_scale: float,
    rank1_scale: float = 1.0,
    n_directions: int = 50,
    seed: int = 0,
) -> float:
    """Largest |directional derivative| of the expected LML near a candidate.

    The candidate covariance is rank1_scale * f f^T + sigma^2 I; at
    rank1_scale = 1 this is the rank-1 sample covariance, which should be
    a stationary point of the expected log-marginal likelihood.
    """
    f = np.asarray(f_gt, dtype=np.float64)
    base = rank1_scale * np.outer(f, f) + noise_var * np.eye(f.shape[0])
    return _max_directional_derivative(
        lambda cov: expected_lml(f, noise_var, cov),
        base,
        perturbation_scale,
        n_directions,
        seed,
    )


def expected_sq_error_stationarity_check(
    f_gt,
    noise_var: float,
    perturbation_scale: float,
    rank1_scale: float = 1.0,
    n_directions: int = 50,
    seed: int = 0,
) -> float:
    """Same directional-derivative probe for the expected squared error."""
    f = np.asarray(f_gt, dtype=np.float64)
    base = rank1_scale * np.outer(f, f) + noise_var * np.eye(f.shape[0])
    return _max_directional_derivative(
        lambda cov: expected_sq_error(f, noise_var, cov),
        base,
        perturbation_scale,
        n_directions,
        seed,
    )
