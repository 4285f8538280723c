"""Weight-space stochastic variational inference.

The rank-r kernel is equivalent to a Bayesian linear model
f(x) = <w, phi(x)> with w ~ N(0, I_r). A Gaussian q(w) = N(m, L L^T)
gives a closed-form ELBO that splits over data points, so training can
run on shuffled mini-batches at O(b r^2) per step regardless of n. The
scale factor n/b uses the actual batch size, which keeps the estimator
unbiased when the last batch of an epoch is short.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import correction as vc
from . import network, rng
from .config import TrainConfig
from .exact import NoiseParam
from .predictive import PredictiveDistribution, mean_nll
from .training import EarlyStopper, NonFiniteError, TrainResult


@dataclass
class VariationalState:
    """Gaussian posterior over the r weights.

    scale_raw is an unconstrained r x r array: its strict lower triangle
    holds L's off-diagonal entries and its diagonal holds log(diag(L)),
    so the realized L always has a strictly positive diagonal.
    """

    mean: np.ndarray
    scale_raw: np.ndarray

    @property
    def rank(self) -> int:
        return self.mean.shape[0]

    def lower(self) -> np.ndarray:
        lower = np.tril(self.scale_raw, k=-1)
        np.fill_diagonal(lower, np.exp(np.diagonal(self.scale_raw)))
        return lower

    @classmethod
    def prior(cls, r: int) -> "VariationalState":
        # m = 0, L = I: q starts at the prior and the KL term at zero
        return cls(mean=np.zeros(r), scale_raw=np.zeros((r, r)))

    def copy(self) -> "VariationalState":
        return VariationalState(self.mean.copy(), self.scale_raw.copy())


def kl_to_standard_normal(q: VariationalState) -> float:
    """KL(N(m, LL^T) || N(0, I)) = (||m||^2 + ||L||_F^2 - log|LL^T| - r)/2."""
    lower = q.lower()
    log_det = 2.0 * float(np.sum(np.diagonal(q.scale_raw)))
    return 0.5 * (
        float(q.mean @ q.mean) + float(np.sum(lower**2)) - log_det - q.rank
    )


def _per_point_terms(phi, y, q: VariationalState, noise_var: float) -> np.ndarray:
    """log N(y_i; <m, phi_i>, sigma^2) - ||L^T phi_i||^2 / (2 sigma^2) per row."""
    phi = np.asarray(phi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    resid = y - phi @ q.mean
    proj = phi @ q.lower()
    log_lik = -0.5 * np.log(2.0 * math.pi * noise_var) - resid**2 / (2.0 * noise_var)
    return log_lik - np.einsum("ij,ij->i", proj, proj) / (2.0 * noise_var)


def elbo_full(phi, y, q: VariationalState, noise_var: float) -> float:
    """Full-data evidence lower bound; tight when q is the exact posterior."""
    return float(np.sum(_per_point_terms(phi, y, q, noise_var))) - kl_to_standard_normal(q)


def elbo_minibatch(
    batch_phi, batch_y, n_total: int, q: VariationalState, noise_var: float
) -> float:
    """Unbiased mini-batch ELBO estimate: (n/b) * batch terms - KL."""
    terms = _per_point_terms(batch_phi, batch_y, q, noise_var)
    scale = n_total / terms.size
    return scale * float(np.sum(terms)) - kl_to_standard_normal(q)


def elbo_minibatch_gradients(
    batch_phi, batch_y, n_total: int, q: VariationalState, noise_var: float
):
    """Objective value and gradients of the mini-batch ELBO.

    Returns (value, g_mean, g_scale_raw, cotangent, d_noise), where the
    cotangent is d elbo / d batch_phi and d_noise is d elbo / d sigma^2.
    The KL enters the mean and scale gradients only.
    """
    phi = np.asarray(batch_phi, dtype=np.float64)
    y = np.asarray(batch_y, dtype=np.float64)
    b = phi.shape[0]
    scale = n_total / b
    lower = q.lower()

    resid = y - phi @ q.mean
    proj = phi @ lower  # rows are phi_i^T L
    value = (
        scale
        * float(
            np.sum(
                -0.5 * np.log(2.0 * math.pi * noise_var)
                - resid**2 / (2.0 * noise_var)
                - np.einsum("ij,ij->i", proj, proj) / (2.0 * noise_var)
            )
        )
        - kl_to_standard_normal(q)
    )

    g_mean = scale * (phi.T @ resid) / noise_var - q.mean
    g_lower = -scale * (phi.T @ proj) / noise_var
    g_lower -= lower
    g_lower += np.diag(1.0 / np.diagonal(lower))
    # chain rule into the unconstrained parameterization
    g_scale_raw = np.tril(g_lower, k=-1)
    np.fill_diagonal(g_scale_raw, np.diagonal(g_lower) * np.diagonal(lower))

    cotangent = scale * (
        np.outer(resid, q.mean) / noise_var - (proj @ lower.T) / noise_var
    )
    d_noise = scale * (
        -0.5 * b / noise_var
        + (float(resid @ resid) + float(np.sum(proj**2))) / (2.0 * noise_var**2)
    )
    return value, g_mean, g_scale_raw, cotangent, d_noise


def predict_svi(
    fmap: network.FeatureMap,
    q: VariationalState,
    noise_var: float,
    x_star,
    correction: vc.CorrectionStats | None = None,
) -> PredictiveDistribution:
    """Posterior predictive: mean <m, phi(x*)>, variance ||L^T phi(x*)||^2 + noise.

    With a correction attached the additive noise becomes the
    heteroscedastic sigma_hat^2(x*)."""
    phi_star = network.forward(fmap, x_star)
    mean = phi_star @ q.mean
    proj = phi_star @ q.lower()
    explained = np.einsum("ij,ij->i", proj, proj)
    if correction is not None:
        star_noise = vc.corrected_noise_many(
            correction, vc.sq_norms(phi_star), noise_var
        )
    else:
        star_noise = noise_var
    return PredictiveDistribution(mean=mean, variance=explained + star_noise)


def _val_nll(fmap, q, noise_var, correction_enabled, train_x, val_data) -> float:
    stats = None
    if correction_enabled:
        stats = vc.fit_correction_stats(network.forward(fmap, train_x))
        stats = vc.CorrectionStats(train_max_sq_norm=stats.train_max_sq_norm)
    pred = predict_svi(fmap, q, noise_var, val_data.x, correction=stats)
    return mean_nll(pred, val_data.y)


def fit_svi(data, fmap: network.FeatureMap, config: TrainConfig, val_data=None):
    """Epoch-based mini-batch training of (m, L, network, noise).

    Batches are drawn by reshuffling the training set each epoch (the
    "shuffle" substream of the seed); the final short batch is kept.
    eval_every and patience are counted in epochs. Returns
    (FeatureMap, VariationalState, NoiseParam, TrainResult).
    """
    config.validate()
    n = data.x.shape[0]
    if n == 0:
        raise ValueError("training data is empty")
    if config.patience is not None and val_data is None:
        raise ValueError("early stopping requires validation data")

    fmap = fmap.copy()
    q = VariationalState.prior(fmap.rank)
    noise = NoiseParam.from_variance(config.noise_var_init, config.noise_var_floor)
    n_weights = len(fmap.weights)
    n_map_params = n_weights + len(fmap.biases)

    adam = network.adam_init(
        [q.mean, q.scale_raw]
        + list(fmap.weights)
        + list(fmap.biases)
        + [np.zeros(1)],
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    # decay the network weight matrices only (and only while trainable):
    # never the variational parameters (the KL already shrinks them) and
    # never biases or noise
    decay_mask = (
        [False, False]
        + [config.learn_map] * n_weights
        + [False] * (len(fmap.biases) + 1)
    )

    shuffle_stream = rng.substream(config.seed, "shuffle")
    stopper = EarlyStopper(patience=config.patience)
    result = TrainResult()
    y = np.asarray(data.y, dtype=np.float64)
    best = (fmap.copy(), q.copy(), noise.raw)
    iteration = 0

    for epoch in range(1, config.max_epochs + 1):
        perm = shuffle_stream.permutation(n)
        epoch_objective = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            step_start = time.perf_counter()
            noise_var = noise.variance
            batch_x = data.x[idx]
            batch_y = y[idx]
            phi, pullback = network.forward_and_pullback(fmap, batch_x)
            value, g_mean, g_scale, cotangent, d_noise = elbo_minibatch_gradients(
                phi, batch_y, n, q, noise_var
            )
            if config.correction_enabled:
                scale = n / phi.shape[0]
                penalty_cot, penalty_d_noise = vc.penalty_cotangent(phi, noise_var)
                value -= vc.trace_penalty_batch(phi, n, noise_var)
                cotangent = cotangent - scale * penalty_cot
                d_noise = d_noise - scale * penalty_d_noise
            if not math.isfinite(value):
                raise NonFiniteError(iteration + 1)
            bundle = pullback(cotangent)
            if not bundle.all_finite():
                raise NonFiniteError(iteration + 1, "gradient")

            params = (
                [q.mean, q.scale_raw]
                + list(fmap.weights)
                + list(fmap.biases)
                + [np.array([noise.raw])]
            )
            grads = [g_mean, g_scale] + list(bundle.weights) + list(bundle.biases)
            grads.append(np.array([d_noise * noise.dvariance_draw]))
            if not config.learn_map:
                for k in range(2, 2 + n_map_params):
                    grads[k] = np.zeros_like(grads[k])
            if not config.learn_noise:
                grads[-1] = np.zeros(1)
            params, adam = network.adam_step_arrays(
                adam, params, grads, decay_mask, maximize=True
            )
            q = VariationalState(mean=params[0], scale_raw=params[1])
            fmap.weights = params[2 : 2 + n_weights]
            fmap.biases = params[2 + n_weights : -1]
            noise = NoiseParam(raw=float(params[-1][0]), floor=config.noise_var_floor)
            iteration += 1
            epoch_objective += value
            result.step_time_s += time.perf_counter() - step_start
            result.step_count += 1

        record = {"epoch": epoch, "iteration": iteration, "objective": epoch_objective}
        if val_data is not None and epoch % config.eval_every == 0:
            val_nll = _val_nll(
                fmap, q, noise.variance, config.correction_enabled, data.x, val_data
            )
            record["val_nll"] = val_nll
            if stopper.update(epoch, val_nll):
                best = (fmap.copy(), q.copy(), noise.raw)
                record["best"] = True
            result.log.append(record)
            if stopper.should_stop(epoch):
                break
        else:
            result.log.append(record)

    if val_data is not None and stopper.best_step >= 0:
        fmap, q, best_raw = best
        noise = NoiseParam(raw=best_raw, floor=config.noise_var_floor)
        result.best_iteration = stopper.best_step
        result.best_val_nll = stopper.best_value
    else:
        result.best_iteration = iteration

    return fmap, q, noise, result
