"""Coarse-to-fine guidance: path-integral control with a particle filter run
at each time-aggregation level.

Each level solves the planning problem on a coarser clock (M base steps per
level step, with M-times the per-step noise), re-weighting the injected noises
by exponentiated trajectory cost to correct the control sequence handed down
from the level above.  The finest corrected sequence guides the planner's
particle proposal.

Controls are stored at full base-clock length everywhere (stretched by
repetition), so moving between levels is plain deterministic subsampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import AugmentedState, VelocityChannels, global_step_batch, wrap_angle
from .errors import DegenerateWeights
from .planner import ess, systematic_resample
from .tasks import evaluate_cost_batch


@dataclass(frozen=True)
class LevelSchedule:
    """Aggregation levels, coarsest first: (factor, particles) pairs.

    Factors must be strictly decreasing and divide the horizon exactly.
    """

    levels: tuple

    def __post_init__(self):
        lv = tuple((int(m), int(n)) for m, n in self.levels)
        object.__setattr__(self, "levels", lv)
        factors = [m for m, _ in lv]
        if factors != sorted(factors, reverse=True) or len(set(factors)) != len(factors):
            raise ValueError("aggregation factors must be strictly decreasing")
        if any(m < 1 or n < 1 for m, n in lv):
            raise ValueError("factors and particle counts must be positive")

    def validate_horizon(self, horizon: int):
        for m, _ in self.levels:
            if horizon % m:
                raise ValueError(f"aggregation factor {m} must divide horizon {horizon}")

    @classmethod
    def parse(cls, text: str) -> "LevelSchedule":
        """Parse "M:N,M:N,..." in any order; levels sort coarsest first."""
        pairs = []
        for chunk in text.split(","):
            m, n = chunk.strip().split(":")
            pairs.append((int(m), int(n)))
        pairs.sort(key=lambda p: -p[0])
        return cls(tuple(pairs))


@dataclass
class PiLevelResult:
    control: np.ndarray            # (K, d) stretched back to the base clock
    final_weights: np.ndarray      # (N,)
    noise_histories: np.ndarray    # (N, K_l, d)
    latent_histories: np.ndarray   # (N, K_l+1, d)
    global_histories: np.ndarray | None
    ess_history: list = field(default_factory=list)
    resample_steps: list = field(default_factory=list)


def level_step_mean(model, x, u, M: int, h: float) -> np.ndarray:
    """Mean of one aggregated step: x + M*(mean(x) - x) + M*sqrt(var(x))*u*h
    on free dimensions; periodic dimensions advance by composing the one-step
    mean dynamics M times.  At M=1 this is exactly the one-step mean plus the
    control offset."""
    x = np.asarray(x, dtype=float)
    mean, _ = _level_step_batch(model, x[None, :], np.asarray(u, dtype=float), M, h)
    return mean[0]


def level_variance(var, M: int):
    """Aggregated per-step variance: M times the one-step variance."""
    return M * np.asarray(var, dtype=float)


def _level_step_batch(model, X, u, M, h):
    """Aggregated means (P, d) and variances (P,) for a batch of states."""
    mu, var = model.step_distribution_batch(X)
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    free = np.asarray(model.free_dims, dtype=np.int64)
    if M == 1:
        mean = mu.copy()
    else:
        mean = X + M * (mu - X)
        periodic = np.setdiff1d(np.arange(X.shape[1]), free)
        if periodic.size:
            Z = X
            for _ in range(M):
                zmu, _ = model.step_distribution_batch(Z)
                Z = np.asarray(zmu, dtype=float)
            mean[:, periodic] = Z[:, periodic]
    if free.size and np.any(u):
        mean[:, free] += M * np.sqrt(var)[:, None] * u[free][None, :] * h
    return mean, level_variance(var, M)


def pi_level(model, task, chain, start: AugmentedState, u_upper, level, seed,
             channels: VelocityChannels | None = None, literal_average: bool = False,
             importance_correction: bool = True, record: bool = False) -> PiLevelResult:
    """One path-integral pass at aggregation (M, N) guided by the upper-level
    control (already stretched to base-clock length K).

    Returns the corrected control, stretched back to length K by repetition.
    ``literal_average`` divides the noise correction by the particle count on
    top of the weight normalization (the non-self-normalized variant).

    ``importance_correction`` keeps the weights consistent with sampling
    around the shifted proposal mean (an exp(-sqrt(M) h u.eps) factor on top
    of the exponentiated state cost); without it, repeated passes guided by
    their own output drift toward controls that ignore the control cost.
    Disable it to reproduce the plain cost-only weighting.
    """
    M, n_particles = int(level[0]), int(level[1])
    u_upper = np.asarray(u_upper, dtype=float)
    K, d = u_upper.shape
    if K % M:
        raise ValueError(f"aggregation factor {M} must divide horizon {K}")
    k_l = K // M
    h = 1.0 / model.frame_rate
    rng = np.random.default_rng(seed)
    free = np.asarray(model.free_dims, dtype=np.int64)

    if channels is None:
        channels = VelocityChannels.from_names(getattr(model, "channel_names", None))
    use_global = start.global_pose is not None
    if use_global and channels is None:
        raise ValueError("a global start pose needs velocity channels")

    u_coarse = u_upper[::M]  # (k_l, d) deterministic subsampling

    X = np.tile(np.asarray(start.latent, dtype=float), (n_particles, 1))
    G = np.tile(start.global_pose, (n_particles, 1)) if use_global else None
    Y, pose_var = model.decode_batch(X)

    noises = np.zeros((n_particles, k_l, d))
    lat_hist = np.zeros((n_particles, k_l + 1, d))
    lat_hist[:, 0] = X
    glob_hist = np.zeros((n_particles, k_l + 1, 3)) if use_global else None
    if use_global:
        glob_hist[:, 0] = G
    w = np.full(n_particles, 1.0 / n_particles)
    ess_history, resample_steps = [], []

    for k in range(1, k_l + 1):
        mean, lvar = _level_step_batch(model, X, u_coarse[k - 1], M, h)
        eps = rng.standard_normal((n_particles, free.size))
        X_new = mean
        if free.size:
            X_new[:, free] += np.sqrt(lvar)[:, None] * eps
            noises[:, k - 1, free] = eps
        if use_global:
            v = Y[:, channels.indices]
            eps_g = rng.standard_normal((n_particles, 3))
            v_mean = M * h * v
            sigma = np.sqrt(M * h * h * pose_var)[:, None]
            disp = v_mean + sigma * eps_g
            c, s = np.cos(G[:, 2]), np.sin(G[:, 2])
            G_new = np.empty_like(G)
            G_new[:, 0] = G[:, 0] + c * disp[:, 0] - s * disp[:, 1]
            G_new[:, 1] = G[:, 1] + s * disp[:, 0] + c * disp[:, 1]
            G_new[:, 2] = wrap_angle(G[:, 2] + disp[:, 2])
        else:
            G_new = None

        Y, pose_var = model.decode_batch(X_new)
        q = evaluate_cost_batch(task, chain, Y, G_new, k * M)
        log_w = -M * q
        if importance_correction and free.size:
            u_free = u_coarse[k - 1][free]
            log_w = log_w - math.sqrt(M) * h * (eps @ u_free)
        w_new = w * np.exp(log_w)
        total = w_new.sum()
        if total == 0.0:
            raise DegenerateWeights(k)
        w = w_new / total

        X = X_new
        if use_global:
            G = G_new
        lat_hist[:, k] = X
        if use_global:
            glob_hist[:, k] = G

        ess_k = ess(w)
        ess_history.append(ess_k)
        if ess_k < n_particles / 2.0:
            idx = systematic_resample(w, rng)
            X = X[idx]
            Y = Y[idx]
            pose_var = pose_var[idx]
            if use_global:
                G = G[idx]
                glob_hist = glob_hist[idx]
            noises = noises[idx]
            lat_hist = lat_hist[idx]
            w = np.full(n_particles, 1.0 / n_particles)
            resample_steps.append(k)

    correction = np.einsum("i,ikd->kd", w, noises) * np.sqrt(M) / (h * M)
    if literal_average:
        correction = correction / n_particles
    u_level = u_coarse + correction
    control = np.repeat(u_level, M, axis=0)
    return PiLevelResult(
        control=control,
        final_weights=w,
        noise_histories=noises,
        latent_histories=lat_hist,
        global_histories=glob_hist,
        ess_history=ess_history,
        resample_steps=resample_steps,
    )


def cascade(model, task, chain, start: AugmentedState, schedule: LevelSchedule,
            horizon: int, seed, channels: VelocityChannels | None = None) -> np.ndarray:
    """Run the levels coarsest to finest; returns the (horizon, d) guidance
    control for the planner.  An empty schedule returns zero control."""
    d = model.latent_dim if hasattr(model, "latent_dim") else np.asarray(start.latent).shape[0]
    u = np.zeros((horizon, d))
    if not schedule.levels:
        return u
    schedule.validate_horizon(horizon)
    children = np.random.SeedSequence(seed).spawn(len(schedule.levels))
    for child, level in zip(children, schedule.levels):
        result = pi_level(model, task, chain, start, u, level, child, channels=channels)
        u = result.control
    return u


def resimulate_from_noises(model, start: AugmentedState, u_coarse, noises, M: int):
    """Replay one particle's latent trajectory from its stored noises.

    Deterministic companion of the filtering pass: resampled histories must
    reproduce their stored states exactly.
    """
    h = 1.0 / model.frame_rate
    free = np.asarray(model.free_dims, dtype=np.int64)
    x = np.asarray(start.latent, dtype=float)
    path = [x]
    for k in range(noises.shape[0]):
        mean, lvar = _level_step_batch(model, x[None, :], u_coarse[k], M, h)
        x = mean[0]
        if free.size:
            x[free] += np.sqrt(lvar[0]) * noises[k, free]
        path.append(x)
    return np.asarray(path)


def gaussian_kl(mu1, cov1, mu2, cov2) -> float:
    """KL divergence between two multivariate normals, computed numerically."""
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    cov1 = np.asarray(cov1, dtype=float)
    cov2 = np.asarray(cov2, dtype=float)
    d = mu1.shape[0]
    diff = mu2 - mu1
    solve_cov = np.linalg.solve(cov2, cov1)
    maha = float(diff @ np.linalg.solve(cov2, diff))
    _, logdet1 = np.linalg.slogdet(cov1)
    _, logdet2 = np.linalg.slogdet(cov2)
    return 0.5 * (np.trace(solve_cov) - d + maha + logdet2 - logdet1)
