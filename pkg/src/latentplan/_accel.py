"""Hot numeric kernels with two interchangeable backends.

The particle planner spends almost all of its time in two places: cross-kernel
evaluation against the training set, and the O(N^2)-per-step table of Gaussian
transition log-densities that feeds the dynamic-programming recursion.  Both
are implemented twice: a plain-numpy version and a numba ``@njit`` version.

Backend selection happens once at import, controlled by the environment
variable ``LATENTPLAN_NUMBA``:

    unset / "auto"   use numba when importable, else fall back to numpy
    "1" / "on"       require numba (ImportError if missing)
    "0" / "off"      force the pure-numpy path

Both backends return equal values to floating-point reduction order (the
max/argmax results are identical bit-for-bit).  ``backend_name()`` reports
which one is active.
"""

from __future__ import annotations

import math
import os

import numpy as np

_TWO_PI = 2.0 * math.pi


# -- pure numpy twins --------------------------------------------------------


def rbf_cross_np(A, B, amplitude, inv_lengthscale):
    """Cross-kernel matrix amplitude * exp(-(inv_lengthscale/2)|a-b|^2), no noise term.

    A: (P, d), B: (N, d) -> (P, N).
    """
    diff = A[:, None, :] - B[None, :, :]
    d2 = np.einsum("pnd,pnd->pn", diff, diff)
    return amplitude * np.exp(-0.5 * inv_lengthscale * d2)


def transition_scores_np(x_new, g_new, step_mean, step_var, g_mean, g_var, free_dims):
    """Gaussian transition log-density table.

    out[j, i] = log N(x_new[i, free]; step_mean[j, free], step_var[j] I)
              + log N(g_new[i];       g_mean[j],          g_var[j] I)

    x_new: (N, d) sampled latent points, g_new: (N, 3) or (N, 0),
    step_mean/step_var and g_mean/g_var are per-parent (M rows).  Deterministic
    parents (var == 0) contribute 0 on exact matches and -inf otherwise; the
    heading residual (third global component) is wrapped to (-pi, pi].
    """
    M = step_mean.shape[0]
    N = x_new.shape[0]
    out = np.zeros((M, N))
    if free_dims.size:
        xf = x_new[:, free_dims]          # (N, f)
        mf = step_mean[:, free_dims]      # (M, f)
        diff = mf[:, None, :] - xf[None, :, :]
        d2 = np.einsum("mnf,mnf->mn", diff, diff)
        f = free_dims.size
        stochastic = step_var > 0.0
        var = np.where(stochastic, step_var, 1.0)
        dens = -0.5 * d2 / var[:, None] - 0.5 * f * np.log(_TWO_PI * var)[:, None]
        dirac = np.where(d2 == 0.0, 0.0, -np.inf)
        out += np.where(stochastic[:, None], dens, dirac)
    if g_new.shape[1] == 3:
        dg = g_mean[:, None, :] - g_new[None, :, :]   # (M, N, 3)
        dth = np.mod(dg[:, :, 2] + np.pi, _TWO_PI) - np.pi
        d2 = dg[:, :, 0] ** 2 + dg[:, :, 1] ** 2 + dth**2
        stochastic = g_var > 0.0
        var = np.where(stochastic, g_var, 1.0)
        dens = -0.5 * d2 / var[:, None] - 1.5 * np.log(_TWO_PI * var)[:, None]
        dirac = np.where(d2 == 0.0, 0.0, -np.inf)
        out += np.where(stochastic[:, None], dens, dirac)
    return out


def viterbi_step_np(delta_prev, trans):
    """Column-wise max/argmax of delta_prev[j] + trans[j, i].

    Ties resolve to the lowest j, matching np.argmax.  Returns (val (N,), j (N,)).
    """
    scores = delta_prev[:, None] + trans
    return scores.max(axis=0), scores.argmax(axis=0)


# -- numba twins -------------------------------------------------------------


def _build_numba():
    from numba import njit

    @njit(cache=True)
    def rbf_cross_nb(A, B, amplitude, inv_lengthscale):
        P, d = A.shape
        N = B.shape[0]
        out = np.empty((P, N))
        for p in range(P):
            for n in range(N):
                d2 = 0.0
                for k in range(d):
                    diff = A[p, k] - B[n, k]
                    d2 += diff * diff
                out[p, n] = amplitude * math.exp(-0.5 * inv_lengthscale * d2)
        return out

    @njit(cache=True)
    def transition_scores_nb(x_new, g_new, step_mean, step_var, g_mean, g_var, free_dims):
        M = step_mean.shape[0]
        N = x_new.shape[0]
        f = free_dims.size
        has_g = g_new.shape[1] == 3
        out = np.zeros((M, N))
        for j in range(M):
            sv = step_var[j]
            gv = g_var[j]
            lat_const = -0.5 * f * math.log(_TWO_PI * sv) if sv > 0.0 else 0.0
            g_const = -1.5 * math.log(_TWO_PI * gv) if (has_g and gv > 0.0) else 0.0
            for i in range(N):
                s = 0.0
                d2 = 0.0
                for t in range(f):
                    diff = step_mean[j, free_dims[t]] - x_new[i, free_dims[t]]
                    d2 += diff * diff
                if f > 0:
                    if sv > 0.0:
                        s += -0.5 * d2 / sv + lat_const
                    elif d2 != 0.0:
                        s = -np.inf
                if has_g and s > -np.inf:
                    dx = g_mean[j, 0] - g_new[i, 0]
                    dy = g_mean[j, 1] - g_new[i, 1]
                    dth = (g_mean[j, 2] - g_new[i, 2] + math.pi) % _TWO_PI - math.pi
                    dg2 = dx * dx + dy * dy + dth * dth
                    if gv > 0.0:
                        s += -0.5 * dg2 / gv + g_const
                    elif dg2 != 0.0:
                        s = -np.inf
                out[j, i] = s
        return out

    @njit(cache=True)
    def viterbi_step_nb(delta_prev, trans):
        M, N = trans.shape
        val = np.empty(N)
        arg = np.empty(N, dtype=np.int64)
        for i in range(N):
            best = delta_prev[0] + trans[0, i]
            bj = 0
            for j in range(1, M):
                v = delta_prev[j] + trans[j, i]
                if v > best:
                    best = v
                    bj = j
            val[i] = best
            arg[i] = bj
        return val, arg

    return rbf_cross_nb, transition_scores_nb, viterbi_step_nb


def _select_backend():
    flag = os.environ.get("LATENTPLAN_NUMBA", "auto").strip().lower()
    if flag in ("0", "off", "false", "no"):
        return "numpy", (rbf_cross_np, transition_scores_np, viterbi_step_np)
    try:
        kernels = _build_numba()
        return "numba", kernels
    except ImportError:
        if flag in ("1", "on", "true", "yes"):
            raise
        return "numpy", (rbf_cross_np, transition_scores_np, viterbi_step_np)


_BACKEND, (rbf_cross, transition_scores, viterbi_step) = _select_backend()


def backend_name() -> str:
    return _BACKEND
