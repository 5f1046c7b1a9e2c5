import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentplan.errors import FactorizationFailure
from latentplan.gp_core import KernelParams, gp_posterior, gram, rbf_kernel


def dense_kernel_matrix(X, p):
    n = X.shape[0]
    return np.array([[rbf_kernel(X[i], X[j], p, i == j) for j in range(n)] for i in range(n)])


class TestRbfKernel:
    def test_same_index_unit_params(self):
        assert rbf_kernel([0.0], [0.0], KernelParams(1, 1, 1), same_index=True) == 2.0

    def test_distance_two(self):
        val = rbf_kernel([0.0], [2.0], KernelParams(1, 1, 1))
        assert val == pytest.approx(math.exp(-2.0), abs=1e-12)

    def test_hand_evaluated_point(self):
        # independent scalar evaluation: 2 * exp(-0.25 * |(1,0)-(0,1)|^2) = 2 exp(-1/2)
        val = rbf_kernel([1.0, 0.0], [0.0, 1.0], KernelParams(2, 0.5, 4))
        assert val == pytest.approx(2.0 * math.exp(-0.5), rel=1e-12)

    @given(
        a=st.lists(st.floats(-5, 5), min_size=1, max_size=4),
        b=st.lists(st.floats(-5, 5), min_size=1, max_size=4),
    )
    def test_symmetry(self, a, b):
        if len(a) != len(b):
            b = (b * 4)[: len(a)]
        p = KernelParams(1.3, 0.7, 10.0)
        assert rbf_kernel(a, b, p) == rbf_kernel(b, a, p)

    def test_rejects_nonpositive_params(self):
        with pytest.raises(ValueError):
            KernelParams(0.0, 1.0, 1.0)


class TestGram:
    def test_single_row(self):
        cache = gram(np.array([[0.7]]), KernelParams(1, 1, 1))
        assert cache.gram.shape == (1, 1)
        assert cache.gram[0, 0] == pytest.approx(2.0)

    def test_duplicate_rows_stay_pd(self):
        X = np.zeros((4, 2))
        p = KernelParams(1.0, 1.0, 2.0)
        cache = gram(X, p)
        off = p.amplitude
        diag = p.amplitude + 0.5
        assert cache.gram[0, 1] == pytest.approx(off)
        assert cache.gram[0, 0] == pytest.approx(diag)
        # cholesky succeeded, so it is numerically PD
        assert np.all(np.isfinite(cache.chol))

    def test_matches_elementwise_recomputation(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(3, 2))
        p = KernelParams(1.4, 0.6, 7.0)
        cache = gram(X, p)
        np.testing.assert_allclose(cache.gram, dense_kernel_matrix(X, p), rtol=1e-12, atol=1e-14)
        assert cache.log_det == pytest.approx(2.0 * np.sum(np.log(np.diag(cache.chol))))

    def test_chol_reconstructs_gram(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(12, 3))
        cache = gram(X, KernelParams(1, 1, 100.0))
        recon = cache.chol @ cache.chol.T
        rel = np.linalg.norm(recon - cache.gram) / np.linalg.norm(cache.gram)
        assert rel < 1e-10

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(6, 2))
        p = KernelParams(1, 2, 50.0)
        perm = rng.permutation(6)
        full = gram(X, p).gram
        permuted = gram(X[perm], p).gram
        np.testing.assert_allclose(permuted, full[np.ix_(perm, perm)], rtol=1e-12)

    def test_factorization_failure_on_degenerate_params(self):
        # overflowing amplitude produces non-finite kernel entries
        X = np.random.default_rng(0).normal(size=(5, 1))
        with pytest.raises(FactorizationFailure):
            gram(X, KernelParams(1e308, 1e-6, 1e308))

    def test_jitter_rescues_singular_but_psd(self):
        # duplicated rows with negligible noise: singular before jitter
        X = np.zeros((6, 2))
        cache = gram(X, KernelParams(1.0, 1.0, 1e18))
        assert np.all(np.isfinite(cache.chol))


class TestPosterior:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.p = KernelParams(1.0, 1.5, 200.0)
        self.X = np.linspace(-2.0, 2.0, 5)[:, None]
        self.Y = rng.normal(size=(5, 3))
        self.cache = gram(self.X, self.p, targets=self.Y)

    def test_interpolates_at_training_row(self):
        p = KernelParams(1.0, 1.5, 1e6)
        cache = gram(self.X, p, targets=self.Y)
        mean, _ = gp_posterior(self.X[2], self.X, self.Y, cache, p)
        tol = 10.0 * (1.0 / p.noise_precision) * np.linalg.norm(self.Y[2])
        assert np.linalg.norm(mean - self.Y[2]) < tol

    def test_prior_limit_far_away(self):
        mean, var = gp_posterior(np.array([250.0]), self.X, self.Y, self.cache, self.p)
        assert np.allclose(mean, 0.0, atol=1e-10)
        assert var == pytest.approx(self.p.amplitude + 1.0 / self.p.noise_precision, rel=1e-10)

    def test_matches_dense_inverse_oracle(self):
        K = dense_kernel_matrix(self.X, self.p)
        Kinv = np.linalg.inv(K)
        for xq in (np.array([0.3]), np.array([-1.2]), self.X[4]):
            kvec = np.array([rbf_kernel(xq, self.X[i], self.p) for i in range(5)])
            mean_o = self.Y.T @ Kinv @ kvec
            var_o = (self.p.amplitude + 1.0 / self.p.noise_precision) - kvec @ Kinv @ kvec
            mean, var = gp_posterior(xq, self.X, self.Y, self.cache, self.p)
            np.testing.assert_allclose(mean, mean_o, atol=1e-8)
            assert var == pytest.approx(max(var_o, 0.0), abs=1e-8)

    def test_cholesky_equals_explicit_inverse_solve(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(20, 2))
        Y = rng.normal(size=(20, 4))
        p = KernelParams(0.8, 1.1, 30.0)
        cache = gram(X, p, targets=Y)
        direct = np.linalg.inv(dense_kernel_matrix(X, p)) @ Y
        rel = np.linalg.norm(cache.inv_times_targets - direct) / np.linalg.norm(direct)
        assert rel < 1e-8

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_variance_nonnegative_on_random_probes(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(8, 2))
        Y = rng.normal(size=(8, 1))
        p = KernelParams(1.0, 1.0, 100.0)
        cache = gram(X, p, targets=Y)
        probes = rng.normal(scale=2.0, size=(16, 2))
        for xq in probes:
            _, var = gp_posterior(xq, X, Y, cache, p)
            assert var >= 0.0
