import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from basisgp import data as dmod
from basisgp import dense, exact, network
from basisgp.config import TrainConfig


def random_instance(seed, n=None, r=None, noise_lo=1e-4):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 60))
    r = r or int(rng.integers(1, 9))
    phi = rng.standard_normal((n, r))
    y = rng.standard_normal(n)
    noise_var = float(rng.uniform(noise_lo, 1.0))
    return phi, y, noise_var


class TestNoiseParam:
    def test_round_trip(self):
        p = exact.NoiseParam.from_variance(1e-2)
        assert abs(p.variance - 1e-2) < 1e-15

    def test_floor_enforced(self):
        # softplus stays positive while representable; at extreme raw it
        # underflows and the variance clamps to the floor itself
        assert exact.NoiseParam(raw=-30.0, floor=1e-6).variance > 1e-6
        assert exact.NoiseParam(raw=-200.0, floor=1e-6).variance >= 1e-6

    def test_gradient_factor_matches_fd(self):
        p = exact.NoiseParam(raw=0.3)
        h = 1e-6
        fd = (
            exact.NoiseParam(raw=0.3 + h).variance
            - exact.NoiseParam(raw=0.3 - h).variance
        ) / (2 * h)
        assert abs(fd - p.dvariance_draw) < 1e-9


class TestLogMarginalLikelihood:
    def test_zero_features_reduce_to_iid_gaussian(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal(7)
        value = exact.log_marginal_likelihood(np.zeros((7, 3)), y, 1.0)
        expected = -3.5 * math.log(2 * math.pi) - 0.5 * float(y @ y)
        assert abs(value - expected) < 1e-12

    def test_one_by_one_dense_check(self):
        # n=1, r=1, phi=1, y=1, sigma^2=1: log N(1; 0, 2)
        value = exact.log_marginal_likelihood(np.array([[1.0]]), np.array([1.0]), 1.0)
        expected = -0.5 * math.log(4 * math.pi) - 0.25
        assert abs(value - expected) < 1e-12

    def test_matches_dense_oracle_50x4(self):
        rng = np.random.default_rng(1)
        phi = rng.standard_normal((50, 4))
        y = rng.standard_normal(50)
        value = exact.log_marginal_likelihood(phi, y, 0.37)
        oracle = dense.lml_from_kernel(phi @ phi.T, y, 0.37)
        assert abs(value - oracle) < 1e-8

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_dense_oracle_random(self, seed):
        phi, y, noise_var = random_instance(seed)
        value = exact.log_marginal_likelihood(phi, y, noise_var)
        oracle = dense.lml_from_kernel(phi @ phi.T, y, noise_var)
        assert abs(value - oracle) < 1e-8

    def test_rank_exceeding_n_is_fine(self):
        rng = np.random.default_rng(2)
        phi = rng.standard_normal((3, 10))
        y = rng.standard_normal(3)
        value = exact.log_marginal_likelihood(phi, y, 0.5)
        oracle = dense.lml_from_kernel(phi @ phi.T, y, 0.5)
        assert abs(value - oracle) < 1e-8


class TestLmlGradient:
    def test_zero_features_noise_gradient(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal(6)
        cot, d_noise = exact.lml_gradient(np.zeros((6, 2)), y, 0.5)
        assert np.all(cot == 0.0)
        expected = -6 / (2 * 0.5) + float(y @ y) / (2 * 0.25)
        assert abs(d_noise - expected) < 1e-10

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_cotangent_matches_finite_differences(self, seed):
        phi, y, noise_var = random_instance(seed, noise_lo=1e-2)
        n, r = phi.shape
        cot, _ = exact.lml_gradient(phi, y, noise_var)
        rng = np.random.default_rng(seed + 1)
        step = 1e-6
        for _ in range(5):
            i, j = int(rng.integers(n)), int(rng.integers(r))
            up, down = phi.copy(), phi.copy()
            up[i, j] += step
            down[i, j] -= step
            fd = (
                exact.log_marginal_likelihood(up, y, noise_var)
                - exact.log_marginal_likelihood(down, y, noise_var)
            ) / (2 * step)
            assert abs(fd - cot[i, j]) <= 1e-5 * max(1.0, abs(fd))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_noise_gradient_matches_finite_differences(self, seed):
        phi, y, noise_var = random_instance(seed, noise_lo=1e-2)
        _, d_noise = exact.lml_gradient(phi, y, noise_var)
        step = 1e-7 * max(1.0, noise_var)
        fd = (
            exact.log_marginal_likelihood(phi, y, noise_var + step)
            - exact.log_marginal_likelihood(phi, y, noise_var - step)
        ) / (2 * step)
        assert abs(fd - d_noise) <= 1e-5 * max(1.0, abs(fd))


class TestPredictExact:
    def make_state(self, phi, y, noise_var, corrected=False):
        fmap = network.init_feature_map(phi.shape[1], [], phi.shape[1], seed=0)
        # identity feature map: x -> x W^T with W = I
        fmap.weights[0] = np.eye(phi.shape[1])
        noise = exact.NoiseParam.from_variance(noise_var)
        return exact.build_exact_state(fmap, phi, y, noise, corrected)

    def test_prior_reversion_at_zero_features(self):
        phi = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        y = np.array([1.0, -1.0, 0.5])
        state = self.make_state(phi, y, 0.25)
        pred = exact.predict_exact(state, np.zeros((1, 2)))
        assert abs(pred.mean[0]) < 1e-12
        assert abs(pred.variance[0] - 0.25) < 1e-10

    def test_one_point_hand_value(self):
        state = self.make_state(np.array([[1.0]]), np.array([1.0]), 1.0)
        pred = exact.predict_exact(state, np.array([[1.0]]))
        assert abs(pred.mean[0] - 0.5) < 1e-12
        assert abs(pred.variance[0] - 1.5) < 1e-12

    def test_matches_dense_posterior(self):
        rng = np.random.default_rng(4)
        phi = rng.standard_normal((60, 5))
        y = rng.standard_normal(60)
        phi_star = rng.standard_normal((9, 5))
        noise_var = 0.2
        state = self.make_state(phi, y, noise_var)
        pred = exact.predict_exact(state, phi_star)
        mean, variance = dense.posterior_from_kernel(
            phi @ phi.T,
            phi @ phi_star.T,
            np.einsum("ij,ij->i", phi_star, phi_star),
            y,
            noise_var,
        )
        assert np.allclose(pred.mean, mean, atol=1e-8)
        assert np.allclose(pred.variance, variance, atol=1e-8)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_variance_bounds(self, seed):
        phi, y, noise_var = random_instance(seed)
        state = self.make_state(phi, y, noise_var)
        phi_star = np.random.default_rng(seed + 5).standard_normal((6, phi.shape[1]))
        pred = exact.predict_exact(state, phi_star)
        prior = np.einsum("ij,ij->i", phi_star, phi_star)
        assert np.all(pred.variance >= noise_var - 1e-12)
        assert np.all(pred.variance <= prior + noise_var + 1e-10)


class TestFitExact:
    def small_data(self, seed=0, n=40):
        data = dmod.gen_step1d(n, 0.01, seed)
        val = dmod.gen_step1d(10, 0.01, seed + 1)
        return data, val

    def config(self, **kw):
        base = dict(
            max_iters=60,
            eval_every=20,
            patience=None,
            correction_enabled=False,
            seed=0,
        )
        base.update(kw)
        return TrainConfig(**base)

    def test_objective_improves(self):
        data, val = self.small_data()
        fmap = network.init_feature_map(1, [8], 4, seed=0)
        state, result = exact.fit_exact(data, fmap, self.config(), val)
        objs = [rec["objective"] for rec in result.log]
        assert objs[-1] > objs[0]

    def test_constant_zero_targets_shrink_noise(self):
        data = dmod.Dataset(
            x=np.linspace(-1, 1, 30)[:, None], y=np.zeros(30), feature_names=["x0"]
        )
        fmap = network.init_feature_map(1, [4], 2, seed=0)
        cfg = self.config(max_iters=300, noise_var_init=1e-2)
        state, result = exact.fit_exact(data, fmap, cfg, None)
        assert state.noise.variance < 1e-2
        objs = [rec["objective"] for rec in result.log]
        assert objs[-1] > objs[0]

    def test_seed_fixed_runs_identical(self):
        data, val = self.small_data()
        fmap = network.init_feature_map(1, [8], 4, seed=3)
        _, r1 = exact.fit_exact(data, fmap, self.config(seed=3), val)
        _, r2 = exact.fit_exact(data, fmap, self.config(seed=3), val)
        assert r1.log == r2.log

    def test_early_stopping_stops(self):
        data, val = self.small_data()
        fmap = network.init_feature_map(1, [8], 4, seed=0)
        cfg = self.config(max_iters=4000, eval_every=5, patience=10)
        state, result = exact.fit_exact(data, fmap, cfg, val)
        assert result.log[-1]["iteration"] < 4000
        assert result.best_iteration <= result.log[-1]["iteration"]

    def test_best_checkpoint_returned(self):
        data, val = self.small_data()
        fmap = network.init_feature_map(1, [8], 4, seed=0)
        cfg = self.config(max_iters=100, eval_every=10, patience=None)
        state, result = exact.fit_exact(data, fmap, cfg, val)
        evals = [rec["val_nll"] for rec in result.log if "val_nll" in rec]
        assert abs(result.best_val_nll - min(evals)) < 1e-15

    def test_patience_without_val_rejected(self):
        data, _ = self.small_data()
        fmap = network.init_feature_map(1, [8], 4, seed=0)
        with pytest.raises(ValueError):
            exact.fit_exact(data, fmap, self.config(patience=20), None)

    def test_correction_enabled_runs_and_uniformizes(self):
        data, val = self.small_data()
        fmap = network.init_feature_map(1, [8], 4, seed=0)
        cfg = self.config(correction_enabled=True, max_iters=80)
        state, _ = exact.fit_exact(data, fmap, cfg, val)
        assert state.correction is not None
        phi = network.forward(state.feature_map, data.x)
        corrected_prior = np.maximum(
            state.correction.train_max_sq_norm, np.einsum("ij,ij->i", phi, phi)
        )
        assert np.allclose(corrected_prior, state.correction.train_max_sq_norm)


class TestScalingBehavior:
    def test_lml_gradient_cost_subquadratic(self):
        # one LML+gradient evaluation at fixed r: 4x the rows should cost
        # well under the quadratic 16x (slack factor 6 over linear)
        import time

        rng = np.random.default_rng(0)
        r = 32

        def time_eval(n):
            phi = rng.standard_normal((n, r))
            y = rng.standard_normal(n)
            exact.lml_value_and_gradient(phi, y, 0.1)  # warm up allocator
            best = float("inf")
            for _ in range(3):
                t0 = time.perf_counter()
                exact.lml_value_and_gradient(phi, y, 0.1)
                best = min(best, time.perf_counter() - t0)
            return best

        t1 = time_eval(10_000)
        t4 = time_eval(40_000)
        assert t4 / t1 <= 6.0, f"ratio {t4 / t1:.2f}"
