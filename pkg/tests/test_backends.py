"""Numba and numpy kernel twins must agree; either backend may be active."""

import numpy as np
import pytest

from latentplan import _accel
from latentplan._accel import rbf_cross_np, transition_scores_np, viterbi_step_np

try:
    nb_kernels = _accel._build_numba()
except ImportError:  # pragma: no cover
    nb_kernels = None

needs_numba = pytest.mark.skipif(nb_kernels is None, reason="numba not installed")


def random_inputs(seed, n_new=40, n_prev=30, d=4, with_global=True):
    rng = np.random.default_rng(seed)
    x_new = rng.normal(size=(n_new, d))
    g_new = rng.normal(size=(n_new, 3)) if with_global else np.zeros((n_new, 0))
    mu = rng.normal(size=(n_prev, d))
    var = rng.uniform(0.01, 1.0, size=n_prev)
    g_mean = rng.normal(size=(n_prev, 3)) if with_global else np.zeros((n_prev, 0))
    g_var = rng.uniform(0.01, 1.0, size=n_prev)
    free = np.array([0, 1], dtype=np.int64)
    return x_new, g_new, mu, var, g_mean, g_var, free


@needs_numba
class TestBackendAgreement:
    def test_rbf_cross(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(25, 3))
        B = rng.normal(size=(40, 3))
        a = rbf_cross_np(A, B, 1.3, 0.7)
        b = nb_kernels[0](A, B, 1.3, 0.7)
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)

    @pytest.mark.parametrize("with_global", [True, False])
    def test_transition_scores(self, with_global):
        args = random_inputs(1, with_global=with_global)
        a = transition_scores_np(*args)
        b = nb_kernels[1](*args)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)

    def test_transition_scores_deterministic_parents(self):
        x_new, g_new, mu, var, g_mean, g_var, free = random_inputs(2)
        var[:10] = 0.0  # Dirac parents
        x_new[:5] = mu[:5]  # exact matches for the first five
        a = transition_scores_np(x_new, g_new, mu, var, g_mean, g_var, free)
        b = nb_kernels[1](x_new, g_new, mu, var, g_mean, g_var, free)
        assert np.array_equal(np.isinf(a), np.isinf(b))
        finite = np.isfinite(a)
        np.testing.assert_allclose(a[finite], b[finite], rtol=1e-12)

    def test_viterbi_step_bit_identical(self):
        rng = np.random.default_rng(3)
        delta = rng.normal(size=30)
        trans = rng.normal(size=(30, 40))
        trans[rng.uniform(size=trans.shape) < 0.1] = -np.inf
        va, ia = viterbi_step_np(delta, trans)
        vb, ib = nb_kernels[2](delta, trans)
        np.testing.assert_array_equal(va, vb)
        np.testing.assert_array_equal(ia, ib)

    def test_viterbi_all_blocked_column(self):
        delta = np.array([0.0, 1.0])
        trans = np.array([[-np.inf, 0.0], [-np.inf, -1.0]])
        va, ia = viterbi_step_np(delta, trans)
        vb, ib = nb_kernels[2](delta, trans)
        assert va[0] == -np.inf and vb[0] == -np.inf
        assert ia[0] == ib[0] == 0


def test_backend_name_reports_selection():
    assert _accel.backend_name() in ("numba", "numpy")


def test_env_flag_forces_numpy(tmp_path):
    import subprocess
    import sys

    code = (
        "from latentplan import _accel; print(_accel.backend_name())"
    )
    out = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True,
        text=True,
        env={"PATH": "/usr/bin:/bin", "LATENTPLAN_NUMBA": "0"},
    )
    assert out.stdout.strip() == "numpy"
