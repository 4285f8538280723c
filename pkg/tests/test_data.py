import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from basisgp import data as dmod


def mp_step1d(x):
    """Arbitrary-precision evaluation of the 1-D ground-truth formula."""
    with mpmath.workdps(50):
        x = mpmath.mpf(x)
        sig = lambda z: 1 / (1 + mpmath.e ** (-z))
        s1 = sig(200 * (x + mpmath.mpf("0.6")))
        s2 = sig(200 * x)
        s3 = sig(200 * (x - mpmath.mpf("0.4")))
        base = (
            mpmath.mpf("0.3") * (1 - s1)
            + mpmath.mpf("0.9") * (s1 - s2)
            - mpmath.mpf("0.6") * (s2 - s3)
        )
        value = base + mpmath.mpf("0.01") * mpmath.sin(50 * mpmath.sin(10 * x))
        return float(value)


class TestStep1dFunction:
    def test_plateau_limits(self):
        # sigmoid saturation forces the four plateau values (up to the
        # 0.01-amplitude oscillation)
        for x, plateau in ((-0.9, 0.3), (-0.3, 0.9), (0.2, -0.6), (0.8, 0.0)):
            assert abs(dmod.f_step1d(np.array([x]))[0] - plateau) <= 0.0100001

    def test_matches_high_precision_oracle(self):
        for x in (-1.0, -0.6, -0.123, 0.0, 0.25, 0.4, 0.999):
            got = dmod.f_step1d(np.array([x]))[0]
            assert abs(got - mp_step1d(x)) < 1e-12


class TestGenStep1d:
    def test_noiseless_targets_equal_ground_truth(self):
        data = dmod.gen_step1d(50, 0.0, seed=0)
        assert np.array_equal(data.y, data.f_gt)

    def test_bitwise_reproducible(self):
        a = dmod.gen_step1d(100, 0.01, seed=5)
        b = dmod.gen_step1d(100, 0.01, seed=5)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_seed_sensitivity(self):
        a = dmod.gen_step1d(50, 0.01, seed=0)
        b = dmod.gen_step1d(50, 0.01, seed=1)
        assert not np.array_equal(a.y, b.y)

    def test_inputs_in_range(self):
        data = dmod.gen_step1d(500, 0.01, seed=2)
        assert data.x.min() >= -1.0 and data.x.max() < 1.0

    def test_empirical_noise_variance(self):
        data = dmod.gen_step1d(100_000, 0.01, seed=3)
        noise = data.y - data.f_gt
        assert abs(noise.var() - 0.01) <= 0.05 * 0.01

    def test_exclusion_gap(self):
        data = dmod.gen_step1d(300, 0.01, seed=4, exclude=(0.2, 0.6))
        assert not np.any((data.x[:, 0] > 0.2) & (data.x[:, 0] < 0.6))


class TestCsv:
    def test_happy_path(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("f0,f1,y\n1.0,2.0,3.0\n4.0,5.0,6.0\n7.0,8.0,9.0\n")
        data = dmod.load_csv(path, "y")
        assert data.feature_names == ["f0", "f1"]
        assert data.x.shape == (3, 2)
        assert np.array_equal(data.y, [3.0, 6.0, 9.0])

    def test_blank_cell_is_parse_error(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("f0,y\n1.0,2.0\n,3.0\n")
        with pytest.raises(dmod.ParseError) as err:
            dmod.load_csv(path, "y")
        assert err.value.row == 1 and err.value.column == "f0"

    def test_non_finite_rejected_with_row(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("f0,y\n1.0,2.0\nnan,3.0\n")
        with pytest.raises(dmod.ParseError) as err:
            dmod.load_csv(path, "y")
        assert err.value.row == 1

    def test_missing_target(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("f0,f1\n1.0,2.0\n")
        with pytest.raises(dmod.MissingColumn):
            dmod.load_csv(path, "y")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("f0,y\n")
        with pytest.raises(dmod.EmptyData):
            dmod.load_csv(path, "y")

    def test_non_numeric_columns_skipped(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("name,f0,y\nalpha,1.0,2.0\nbeta,3.0,4.0\n")
        data = dmod.load_csv(path, "y")
        assert data.feature_names == ["f0"]

    def test_ignore_columns(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x0,y,f_gt\n0.1,0.2,0.19\n0.3,0.4,0.41\n")
        data = dmod.load_csv(path, "y", ignore_columns=("f_gt",))
        assert data.feature_names == ["x0"]

    def test_round_trip_exact(self, tmp_path):
        source = dmod.gen_step1d(40, 0.01, seed=6)
        path = tmp_path / "round.csv"
        dmod.dataset_to_csv(path, source)
        back = dmod.load_csv(path, "y", ignore_columns=("f_gt",))
        assert np.array_equal(back.x, source.x)
        assert np.array_equal(back.y, source.y)


class TestNormalize:
    def test_full_range_inputs_unchanged(self):
        x = np.array([[-1.0], [0.0], [1.0]])
        data = dmod.Dataset(x=x, y=np.array([0.0, 1.0, 2.0]), feature_names=["x0"])
        normed, stats = dmod.normalize(data)
        assert np.allclose(normed.x, x, atol=1e-15)

    def test_two_point_targets(self):
        data = dmod.Dataset(
            x=np.array([[0.0], [1.0]]), y=np.array([0.0, 2.0]), feature_names=["x0"]
        )
        normed, stats = dmod.normalize(data)
        assert stats.y_mean == 1.0 and stats.y_std == 1.0
        assert np.array_equal(normed.y, [-1.0, 1.0])

    def test_round_trip_identity(self):
        rng = np.random.default_rng(0)
        data = dmod.Dataset(
            x=rng.uniform(-3, 5, size=(20, 2)),
            y=rng.standard_normal(20),
            feature_names=["a", "b"],
        )
        normed, stats = dmod.normalize(data)
        from basisgp.predictive import PredictiveDistribution

        pred = PredictiveDistribution(mean=normed.y, variance=np.ones(20))
        back = dmod.denormalize_prediction(pred, stats)
        assert np.allclose(back.mean, data.y, atol=1e-12)
        assert np.allclose(back.variance, stats.y_std**2, atol=1e-12)

    def test_constant_column_dropped_with_warning(self):
        data = dmod.Dataset(
            x=np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]),
            y=np.array([1.0, 2.0, 3.0]),
            feature_names=["a", "b"],
        )
        with pytest.warns(dmod.ConstantColumnWarning):
            normed, stats = dmod.normalize(data)
        assert normed.feature_names == ["a"]
        assert stats.kept_columns == [0]

    def test_constant_target_rejected(self):
        data = dmod.Dataset(
            x=np.array([[1.0], [2.0]]), y=np.array([3.0, 3.0]), feature_names=["a"]
        )
        with pytest.raises(dmod.ConstantTarget):
            dmod.normalize(data)


class TestSplit:
    def make(self, n, seed=0):
        return dmod.gen_step1d(n, 0.01, seed)

    def test_exact_division_sizes(self):
        train, val, test = dmod.split(
            self.make(10), (0.7, 0.1, 0.2), seed=0, with_normalization=False
        )
        assert (train.n, val.n, test.n) == (7, 1, 2)

    def test_deterministic(self):
        a = dmod.split(self.make(10), (0.7, 0.1, 0.2), seed=3, with_normalization=False)
        b = dmod.split(self.make(10), (0.7, 0.1, 0.2), seed=3, with_normalization=False)
        for da, db in zip(a, b):
            assert np.array_equal(da.x, db.x)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(3, 80), st.integers(0, 10_000))
    def test_union_recovers_rows_exactly(self, n, seed):
        data = self.make(n)
        train, val, test = dmod.split(
            data, (0.7, 0.1, 0.2), seed=seed, with_normalization=False
        )
        rows = np.concatenate([train.x[:, 0], val.x[:, 0], test.x[:, 0]])
        assert sorted(rows.tolist()) == sorted(data.x[:, 0].tolist())
        assert train.n + val.n + test.n == n

    def test_fraction_mismatch_rejected(self):
        with pytest.raises(dmod.DataError):
            dmod.split(self.make(10), (0.7, 0.1, 0.1), seed=0)

    def test_normalization_uses_train_stats_only(self):
        data = self.make(50, seed=9)
        train, val, test = dmod.split(data, (0.7, 0.1, 0.2), seed=9)
        stats = train.normalization
        # recompute from the raw training rows: identical statistics
        raw_train, _, _ = dmod.split(data, (0.7, 0.1, 0.2), seed=9, with_normalization=False)
        assert stats.y_mean == float(np.mean(raw_train.y))
        assert np.allclose(stats.x_min, raw_train.x.min(axis=0))
        assert val.normalization is stats and test.normalization is stats
