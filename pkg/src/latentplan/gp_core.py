"""RBF kernel, Gram-matrix cache, and Gaussian-process posterior evaluation.

Every solve goes through a Cholesky factor; explicit matrix inversion is
reserved for test oracles.  The Kronecker-delta noise term is applied by
training-row *index*, never by floating-point equality, so near-duplicate
frames stay well separated on the Gram diagonal.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import _accel
from .errors import FactorizationFailure

_JITTER_SCALE = 1e-10


@dataclass(frozen=True)
class KernelParams:
    """RBF hyperparameters: k(a, b) = amplitude * exp(-(inverse_lengthscale/2)|a-b|^2)
    plus 1/noise_precision on matched training indices."""

    amplitude: float
    inverse_lengthscale: float
    noise_precision: float

    def __post_init__(self):
        if not (self.amplitude > 0 and self.inverse_lengthscale > 0 and self.noise_precision > 0):
            raise ValueError("kernel parameters must be strictly positive")

    @property
    def noise_variance(self) -> float:
        return 1.0 / self.noise_precision

    def log_array(self) -> np.ndarray:
        return np.log([self.amplitude, self.inverse_lengthscale, self.noise_precision])

    @classmethod
    def from_log_array(cls, v) -> "KernelParams":
        a, l, n = np.exp(np.asarray(v, dtype=float))
        return cls(float(a), float(l), float(n))


@dataclass(frozen=True)
class GramCache:
    """Immutable factorization bundle for one Gram matrix.

    ``inv_times_targets`` is gram^{-1} @ targets when targets were supplied at
    build time (the precomputation the posterior mean needs), else None.
    ``chol_inv`` is the inverse of the Cholesky factor, kept so batched
    posterior variances reduce to one matrix product.
    """

    gram: np.ndarray
    chol: np.ndarray
    chol_inv: np.ndarray
    inv_times_targets: np.ndarray | None
    log_det: float

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        half = solve_triangular(self.chol, rhs, lower=True, check_finite=False)
        return solve_triangular(self.chol.T, half, lower=False, check_finite=False)


def rbf_kernel(a, b, p: KernelParams, same_index: bool = False) -> float:
    """Scalar kernel value; ``same_index`` adds the 1/noise_precision nugget."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d2 = float(np.sum((a - b) ** 2))
    val = p.amplitude * math.exp(-0.5 * p.inverse_lengthscale * d2)
    if same_index:
        val += 1.0 / p.noise_precision
    return val


def rbf_cross(A, B, p: KernelParams) -> np.ndarray:
    """(P, N) cross-kernel matrix between row sets, noise term excluded."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return _accel.rbf_cross(A, B, p.amplitude, p.inverse_lengthscale)


def gram(Xrows, p: KernelParams, targets=None) -> GramCache:
    """Build the Gram matrix over training rows and factorize it.

    Raises FactorizationFailure when the matrix is not numerically positive
    definite after one jitter retry (1e-10 * trace/N added to the diagonal).
    """
    X = np.atleast_2d(np.asarray(Xrows, dtype=float))
    n = X.shape[0]
    K = rbf_cross(X, X, p)
    K = 0.5 * (K + K.T)
    K[np.diag_indices(n)] += 1.0 / p.noise_precision
    if not np.all(np.isfinite(K)):
        raise FactorizationFailure(f"Gram matrix ({n}x{n}) has non-finite entries")

    def _factor(mat):
        L = np.linalg.cholesky(mat)
        if not np.all(np.isfinite(L)) or np.any(np.diag(L) <= 0):
            raise np.linalg.LinAlgError("non-finite or zero pivots")
        return L

    try:
        L = _factor(K)
    except np.linalg.LinAlgError:
        jitter = _JITTER_SCALE * np.trace(K) / n
        try:
            L = _factor(K + jitter * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise FactorizationFailure(
                f"Gram matrix ({n}x{n}) not positive definite, jitter {jitter:.3e} did not help"
            ) from exc
    log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
    chol_inv = solve_triangular(L, np.eye(n), lower=True, check_finite=False)
    inv_t = None
    if targets is not None:
        targets = np.asarray(targets, dtype=float)
        half = solve_triangular(L, targets, lower=True, check_finite=False)
        inv_t = solve_triangular(L.T, half, lower=False, check_finite=False)
    return GramCache(gram=K, chol=L, chol_inv=chol_inv, inv_times_targets=inv_t, log_det=log_det)


def gp_posterior(xstar, train_in, train_out, cache: GramCache, p: KernelParams):
    """Posterior mean (D-vector) and scalar variance at one query point.

    The prior variance k(x, x) includes the noise term, matching the kernel's
    own diagonal convention; the variance is clamped at zero after evaluation
    and a numerical-health warning fires if the raw value dips well below.
    """
    mean, var = gp_posterior_batch(np.atleast_2d(xstar), train_in, train_out, cache, p)
    return mean[0], float(var[0])


def gp_posterior_batch(Xstar, train_in, train_out, cache: GramCache, p: KernelParams):
    """Vectorized posterior over query rows: returns (P, D) means and (P,) variances."""
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    kvec = rbf_cross(Xstar, train_in, p)  # (P, N)
    if cache.inv_times_targets is not None:
        mean = kvec @ cache.inv_times_targets
    else:
        mean = kvec @ cache.solve(np.asarray(train_out, dtype=float))
    half = kvec @ cache.chol_inv.T  # (P, N)
    kxx = p.amplitude + 1.0 / p.noise_precision
    var = kxx - np.einsum("pn,pn->p", half, half)
    floor = -1e-8 * kxx
    if np.any(var < floor):
        warnings.warn(
            f"posterior variance {var.min():.3e} below round-off floor {floor:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return mean, np.maximum(var, 0.0)
