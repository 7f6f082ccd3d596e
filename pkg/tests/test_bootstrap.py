import numpy as np
import pytest
from scipy.stats import binomtest

from nmfrank._seeding import STREAM_DATA, STREAM_FIT, derive_seed
from nmfrank.bootstrap import (
    NullModel,
    boot_lr_sample_bestofm,
    boot_lr_sample_single,
    error_values,
    pure_error_sample,
    read_sample,
    sample_null_dataset,
    write_sample,
)
from nmfrank.data import ModelFamily
from nmfrank.exceptions import ConfigError
from nmfrank.likelihood import lr_statistic
from nmfrank.nmf import FitOptions, fit_nmf, start_seed
from nmfrank.simulate import gen_base_features, gen_weights_poisson

POISSON = ModelFamily("poisson")


def small_null(k=2, p=10, n=8, depth=400.0, seed=5):
    F = gen_base_features(p, k, seed)
    W = gen_weights_poisson(k, n, np.full(n, depth), seed + 1)
    return NullModel(F @ W, POISSON)


class TestSampleNull:
    def test_zero_mean_poisson(self):
        X = sample_null_dataset(NullModel(np.zeros((3, 4)), POISSON), 1)
        assert not X.values.any()

    def test_gaussian_truncation_half(self):
        null = NullModel(np.zeros((100, 100)), ModelFamily("gaussian", 1.0))
        X = sample_null_dataset(null, 2)
        zeros = int(np.sum(X.values == 0))
        assert binomtest(zeros, 10_000, 0.5).pvalue > 1e-3
        assert X.values.min() >= 0

    @pytest.mark.parametrize("lam", [0.5, 3.0, 40.0])
    def test_poisson_mean_clt(self, lam):
        X = sample_null_dataset(NullModel(np.full((100, 100), lam), POISSON), 3)
        assert abs(X.values.mean() - lam) < 4 * np.sqrt(lam / 10_000)

    def test_deterministic(self):
        null = NullModel(np.full((5, 5), 2.0), ModelFamily("gaussian", 0.5))
        a, b = sample_null_dataset(null, 9), sample_null_dataset(null, 9)
        np.testing.assert_array_equal(a.values, b.values)

    def test_negative_mean_rejected(self):
        with pytest.raises(ValueError):
            NullModel(-np.ones((2, 2)), POISSON)


class TestLRSample:
    def test_single_replicate_composition(self):
        null, k, master = small_null(), 2, 17
        sample = boot_lr_sample_bestofm(null, k, 1, 1, master)
        X = sample_null_dataset(null, derive_seed(master, STREAM_DATA, 0))
        fk = fit_nmf(X, k, "poisson", start_seed(derive_seed(master, STREAM_FIT, 0, k), k, 0))
        fk1 = fit_nmf(X, k + 1, "poisson",
                      start_seed(derive_seed(master, STREAM_FIT, 0, k + 1), k + 1, 0))
        assert sample.values[0] == lr_statistic(fk.loglik, fk1.loglik, k).value

    def test_deterministic(self):
        null = small_null()
        a = boot_lr_sample_bestofm(null, 2, 4, 3, 5)
        b = boot_lr_sample_bestofm(null, 2, 4, 3, 5)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.per_sample_seeds == b.per_sample_seeds

    def test_single_equals_bestofm_one(self):
        null = small_null()
        a = boot_lr_sample_single(null, 2, 5, 8)
        b = boot_lr_sample_bestofm(null, 2, 5, 1, 8)
        np.testing.assert_array_equal(a.values, b.values)

    def test_parallel_matches_serial(self):
        null = small_null()
        a = boot_lr_sample_single(null, 2, 6, 8, workers=1)
        b = boot_lr_sample_single(null, 2, 6, 8, workers=3)
        np.testing.assert_array_equal(a.values, b.values)

    def test_single_start_can_be_negative(self):
        # Fits stopped after ten sweeps carry large convergence error.
        null = small_null(k=2, p=10, n=8, depth=1e4)
        sample = boot_lr_sample_single(null, 2, 30, 1, FitOptions(max_iter=10))
        assert np.mean(sample.values < 0) > 0

    def test_fifty_finite(self):
        sample = boot_lr_sample_single(small_null(), 1, 50, 4, FitOptions(max_iter=200))
        assert len(sample) == 50
        assert np.all(np.isfinite(sample.values))

    def test_bestofm_is_single_plus_correction(self):
        null, k, master = small_null(), 2, 21
        best = boot_lr_sample_bestofm(null, k, 6, 4, master)
        single = boot_lr_sample_single(null, k, 6, master)
        # Start 0 of every best-of-m replicate is the single-start fit.
        np.testing.assert_array_equal(best.logliks_k[:, 0], single.logliks_k[:, 0])
        np.testing.assert_array_equal(best.logliks_k1[:, 0], single.logliks_k1[:, 0])
        correction = -2.0 * (
            (best.logliks_k.max(axis=1) - best.logliks_k[:, 0])
            - (best.logliks_k1.max(axis=1) - best.logliks_k1[:, 0])
        )
        np.testing.assert_allclose(best.values, single.values + correction, rtol=0, atol=1e-9)

    def test_bad_sizes(self):
        with pytest.raises(ConfigError):
            boot_lr_sample_bestofm(small_null(), 1, 0, 1, 0)


class TestErrorSample:
    def test_identical_starts(self):
        assert np.all(error_values([-1.0, -1.0, -1.0], [-2.0, -2.0, -2.0]) == 0)

    def test_enumeration(self):
        # Shortfalls e(k) = {0, 1}, e(k+1) = {0, 0}; a rank-k shortfall inflates lambda.
        values = error_values([-5.0, -6.0], [-3.0, -3.0])
        assert sorted(values.tolist()) == [0.0, 0.0, 2.0, 2.0]

    def test_mean_identity(self):
        rng = np.random.default_rng(0)
        lk, lk1 = rng.normal(-100, 3, 7), rng.normal(-90, 3, 7)
        values = error_values(lk, lk1)
        expected = 2.0 * (np.mean(lk.max() - lk) - np.mean(lk1.max() - lk1))
        assert values.mean() == pytest.approx(expected, rel=1e-12)

    def test_from_fits(self):
        es = pure_error_sample(small_null(), 2, 5, seed=3)
        assert len(es) == 25
        assert np.any(es.values == 0)
        e_k = es.logliks_k.max() - es.logliks_k
        e_k1 = es.logliks_k1.max() - es.logliks_k1
        assert e_k.min() >= 0 and e_k1.min() >= 0
        assert es.values.max() == pytest.approx(2 * e_k.max())
        assert es.values.min() == pytest.approx(-2 * e_k1.max())

    def test_deterministic(self):
        a = pure_error_sample(small_null(), 1, 3, seed=3)
        b = pure_error_sample(small_null(), 1, 3, seed=3)
        np.testing.assert_array_equal(a.values, b.values)

    def test_needs_two_starts(self):
        with pytest.raises(ConfigError):
            pure_error_sample(small_null(), 1, 1, seed=0)


def test_sample_csv_round_trip(tmp_path):
    values = np.random.default_rng(1).normal(size=20)
    write_sample(values, tmp_path / "s.csv")
    np.testing.assert_array_equal(read_sample(tmp_path / "s.csv"), values)
