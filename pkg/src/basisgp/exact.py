"""Exact GP inference for rank-r basis kernels.

With K = Phi Phi^T the n x n solve collapses, via the matrix inversion
and determinant lemmas, onto the r x r matrix
Lambda = Phi^T Phi + sigma^2 I. Everything here — the log-marginal
likelihood, its gradient with respect to the features and the noise, and
the posterior — costs O(n r^2) time and O(n r) memory.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import correction as vc
from . import linalg, network
from .config import TrainConfig
from .predictive import PredictiveDistribution, mean_nll
from .training import EarlyStopper, NonFiniteError, TrainResult


def softplus(x: float) -> float:
    return float(np.logaddexp(0.0, x))


def softplus_inv(y: float) -> float:
    if y <= 0:
        raise ValueError("softplus_inv requires a positive argument")
    # log(expm1(y)), stable for both small and large y
    return y + math.log(-math.expm1(-y))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass
class NoiseParam:
    """Observation-noise variance through an unconstrained parameter.

    sigma^2 = floor + softplus(raw), keeping the variance strictly above
    the floor while leaving `raw` free for gradient ascent.
    """

    raw: float
    floor: float = 1e-6

    @property
    def variance(self) -> float:
        return self.floor + softplus(self.raw)

    @property
    def dvariance_draw(self) -> float:
        return sigmoid(self.raw)

    @classmethod
    def from_variance(cls, variance: float, floor: float = 1e-6) -> "NoiseParam":
        if variance <= floor:
            raise ValueError(f"variance must exceed the floor {floor}")
        return cls(raw=softplus_inv(variance - floor), floor=floor)


@dataclass
class ExactState:
    """Fitted cache for posterior prediction.

    When a correction is present, lambda_chol and projected_targets hold
    the noise-rescaled versions (Phi^T D^-1 Phi + sigma^2 I and its solve
    against Phi^T D^-1 y), so prediction never needs the training targets.
    """

    feature_map: network.FeatureMap
    lambda_chol: linalg.CholeskyFactor
    projected_targets: np.ndarray
    noise: NoiseParam
    correction: vc.CorrectionStats | None = None
    train_feature_cache: np.ndarray | None = None


def _lambda_factor(phi: np.ndarray, noise_var: float) -> linalg.CholeskyFactor:
    gram = phi.T @ phi
    lam = 0.5 * (gram + gram.T) + noise_var * np.eye(phi.shape[1])
    return linalg.cholesky(lam)


def log_marginal_likelihood(phi, y, noise_var: float) -> float:
    """log N(y; 0, Phi Phi^T + sigma^2 I) via the r x r system."""
    phi = np.asarray(phi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, r = phi.shape
    factor = _lambda_factor(phi, noise_var)
    t = linalg.solve_triangular(factor, phi.T @ y)
    return (
        -0.5 * n * math.log(2.0 * math.pi)
        - 0.5 * (n - r) * math.log(noise_var)
        - 0.5 * linalg.logdet(factor)
        - float(y @ y) / (2.0 * noise_var)
        + float(t @ t) / (2.0 * noise_var)
    )


def lml_value_and_gradient(phi, y, noise_var: float):
    """(lml, d lml / d phi, d lml / d sigma^2) sharing one factorization.

    The feature cotangent is -Sigma^-1 Phi + Sigma^-1 y y^T Sigma^-1 Phi,
    where both solves reduce through the identity
    Sigma^-1 M = (M - Phi Lambda^-1 Phi^T M) / sigma^2. The noise term
    uses tr(Sigma^-1) = (n - r + sigma^2 tr(Lambda^-1)) / sigma^2.
    """
    phi = np.asarray(phi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, r = phi.shape
    factor = _lambda_factor(phi, noise_var)
    gram = phi.T @ phi
    phi_t_y = phi.T @ y
    t = linalg.solve_triangular(factor, phi_t_y)
    value = (
        -0.5 * n * math.log(2.0 * math.pi)
        - 0.5 * (n - r) * math.log(noise_var)
        - 0.5 * linalg.logdet(factor)
        - float(y @ y) / (2.0 * noise_var)
        + float(t @ t) / (2.0 * noise_var)
    )

    rhs = np.concatenate([gram, phi_t_y[:, None]], axis=1)
    solved = linalg.solve_posdef(factor, rhs)
    sigma_inv_phi = (phi - phi @ solved[:, :r]) / noise_var
    sigma_inv_y = (y - phi @ solved[:, r]) / noise_var
    cotangent = -sigma_inv_phi + np.outer(sigma_inv_y, y @ sigma_inv_phi)

    lam_inv_lower = linalg.solve_triangular(factor, np.eye(r))
    tr_lambda_inv = float(np.sum(lam_inv_lower**2))
    tr_sigma_inv = (n - r + noise_var * tr_lambda_inv) / noise_var
    d_noise = -0.5 * tr_sigma_inv + 0.5 * float(sigma_inv_y @ sigma_inv_y)
    return value, cotangent, d_noise


def lml_gradient(phi, y, noise_var: float):
    """Gradient of the log-marginal likelihood: (feature cotangent, d_noise)."""
    _, cotangent, d_noise = lml_value_and_gradient(phi, y, noise_var)
    return cotangent, d_noise


def build_exact_state(
    fmap: network.FeatureMap,
    phi: np.ndarray,
    y: np.ndarray,
    noise: NoiseParam,
    correction_enabled: bool,
    keep_features: bool = False,
) -> ExactState:
    """Assemble the prediction cache from training features."""
    noise_var = noise.variance
    if correction_enabled:
        stats = vc.fit_correction_stats(phi)
        factor, projected = vc.weighted_cache(phi, y, noise_var, stats)
        stats = vc.CorrectionStats(train_max_sq_norm=stats.train_max_sq_norm)
    else:
        stats = None
        factor = _lambda_factor(phi, noise_var)
        projected = linalg.solve_posdef(factor, phi.T @ y)
    return ExactState(
        feature_map=fmap,
        lambda_chol=factor,
        projected_targets=projected,
        noise=noise,
        correction=stats,
        train_feature_cache=phi if keep_features else None,
    )


def predict_exact(state: ExactState, x_star) -> PredictiveDistribution:
    """Posterior mean and variance at new inputs.

    mean = phi(x*)^T Lambda^-1 Phi^T y and
    variance = sigma^2 ||Lambda^-1/2 phi(x*)||^2 + sigma^2, with the
    noise-rescaled Lambda and the heteroscedastic sigma_hat^2(x*) when a
    correction is attached.
    """
    phi_star = network.forward(state.feature_map, x_star)
    noise_var = state.noise.variance
    mean = phi_star @ state.projected_targets
    half = linalg.solve_triangular(state.lambda_chol, phi_star.T)
    explained = noise_var * np.einsum("ij,ij->j", half, half)
    if state.correction is not None:
        star_noise = vc.corrected_noise_many(
            state.correction, vc.sq_norms(phi_star), noise_var
        )
    else:
        star_noise = noise_var
    return PredictiveDistribution(mean=mean, variance=explained + star_noise)


def _val_nll(fmap, phi, y, noise, correction_enabled, val_data) -> float:
    state = build_exact_state(fmap, phi, y, noise, correction_enabled)
    pred = predict_exact(state, val_data.x)
    return mean_nll(pred, val_data.y)


def fit_exact(data, fmap: network.FeatureMap, config: TrainConfig, val_data=None):
    """Full-batch gradient ascent of the log-marginal likelihood.

    Maximizes lml (minus the trace penalty when correction is enabled)
    jointly over the network parameters and the raw noise with Adam.
    Validation NLL is checked every eval_every iterations; the returned
    state is the best-validation checkpoint, not the final iterate.

    Returns (ExactState, TrainResult).
    """
    config.validate()
    if data.x.shape[0] == 0:
        raise ValueError("training data is empty")
    if config.patience is not None and val_data is None:
        raise ValueError("early stopping requires validation data")

    fmap = fmap.copy()
    noise = NoiseParam.from_variance(config.noise_var_init, config.noise_var_floor)
    n_weights = len(fmap.weights)

    adam = network.adam_init(
        list(fmap.weights) + list(fmap.biases) + [np.zeros(1)],
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    # decay applies to trainable weight matrices only; frozen maps must
    # not shrink either
    decay_mask = [config.learn_map] * n_weights + [False] * (len(fmap.biases) + 1)

    stopper = EarlyStopper(patience=config.patience)
    result = TrainResult()
    y = np.asarray(data.y, dtype=np.float64)
    best_checkpoint = (fmap.copy(), noise.raw)

    for iteration in range(1, config.max_iters + 1):
        step_start = time.perf_counter()
        noise_var = noise.variance
        phi, pullback = network.forward_and_pullback(fmap, data.x)
        value, cotangent, d_noise = lml_value_and_gradient(phi, y, noise_var)
        objective = value
        if config.correction_enabled:
            penalty_cot, penalty_d_noise = vc.penalty_cotangent(phi, noise_var)
            objective -= vc.trace_penalty_full(phi, noise_var)
            cotangent = cotangent - penalty_cot
            d_noise = d_noise - penalty_d_noise
        if not math.isfinite(objective):
            raise NonFiniteError(iteration)

        bundle = pullback(cotangent)
        if not bundle.all_finite() or not math.isfinite(d_noise):
            raise NonFiniteError(iteration, "gradient")

        params = list(fmap.weights) + list(fmap.biases) + [np.array([noise.raw])]
        grads = list(bundle.weights) + list(bundle.biases)
        grads.append(np.array([d_noise * noise.dvariance_draw]))
        if not config.learn_map:
            grads[: n_weights + len(fmap.biases)] = [
                np.zeros_like(g) for g in grads[:-1]
            ]
        if not config.learn_noise:
            grads[-1] = np.zeros(1)
        params, adam = network.adam_step_arrays(
            adam, params, grads, decay_mask, maximize=True
        )
        fmap.weights = params[:n_weights]
        fmap.biases = params[n_weights:-1]
        noise = NoiseParam(raw=float(params[-1][0]), floor=config.noise_var_floor)
        result.step_time_s += time.perf_counter() - step_start
        result.step_count += 1

        record = {"iteration": iteration, "objective": objective}
        if val_data is not None and iteration % config.eval_every == 0:
            phi_now = network.forward(fmap, data.x)
            val_nll = _val_nll(
                fmap, phi_now, y, noise, config.correction_enabled, val_data
            )
            record["val_nll"] = val_nll
            if stopper.update(iteration, val_nll):
                best_checkpoint = (fmap.copy(), noise.raw)
                record["best"] = True
            result.log.append(record)
            if stopper.should_stop(iteration):
                break
        else:
            result.log.append(record)

    if val_data is not None and stopper.best_step >= 0:
        best_map, best_raw = best_checkpoint
        best_noise = NoiseParam(raw=best_raw, floor=config.noise_var_floor)
        result.best_iteration = stopper.best_step
        result.best_val_nll = stopper.best_value
    else:
        best_map, best_noise = fmap, noise
        result.best_iteration = result.step_count

    phi_best = network.forward(best_map, data.x)
    state = build_exact_state(
        best_map,
        phi_best,
        y,
        best_noise,
        config.correction_enabled,
        keep_features=True,
    )
    return state, result
