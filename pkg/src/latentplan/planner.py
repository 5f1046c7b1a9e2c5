"""MAP trajectory planning: Viterbi recursion over a particle-filter trellis.

Particles discretize the continuous augmented state space step by step; a
dynamic-programming table over that moving support tracks the best partial
trajectory into every particle, while the filter weights (emission terms only)
drive resampling so the support stays in low-cost regions.  Backtracking the
DP pointers yields the plan.

The model argument only needs the generative-system surface: ``free_dims``,
``frame_rate``, ``step_distribution_batch(X)`` and ``decode_batch(X)`` - the
trained latent model has it, and the test suite's toy systems provide the
same methods.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .dynamics import AugmentedState, VelocityChannels, global_step_batch
from .errors import DegenerateWeights, NoFeasiblePath
from .tasks import evaluate_cost_batch


@dataclass(frozen=True)
class PlannerConfig:
    particle_count: int
    horizon: int
    seed: int = 0
    resample_threshold_fraction: float = 0.5
    guidance: np.ndarray | None = None  # (horizon, d) control, noise-std units per second
    resample_enabled: bool = True
    record_trellis: bool = False

    def __post_init__(self):
        if self.particle_count < 1 or self.horizon < 1:
            raise ValueError("need at least one particle and one step")
        if not 0.0 < self.resample_threshold_fraction <= 1.0:
            raise ValueError("resample threshold fraction must be in (0, 1]")
        if self.guidance is not None:
            g = np.asarray(self.guidance, dtype=float)
            if g.ndim != 2 or g.shape[0] < self.horizon:
                raise ValueError("guidance must cover the horizon, one row per step")
            object.__setattr__(self, "guidance", g)


@dataclass
class TrellisStep:
    """Post-resampling record of one recursion step."""

    latents: np.ndarray          # (N, d)
    globals: np.ndarray | None   # (N, 3)
    poses: np.ndarray            # (N, D)
    pose_vars: np.ndarray        # (N,)
    costs: np.ndarray            # (N,)
    dp_scores: np.ndarray        # (N,)   delta
    back_pointers: np.ndarray    # (N,)   psi, into the previous step's record
    weights: np.ndarray          # (N,)
    ess: float
    resample_indices: np.ndarray | None  # ancestry map when resampling fired


@dataclass
class Plan:
    latents: np.ndarray          # (K, d)
    globals: np.ndarray | None   # (K, 3)
    poses: np.ndarray            # (K, D)
    step_costs: np.ndarray       # (K,)
    dp_scores: np.ndarray        # (K,) delta along the backtracked path
    path_indices: np.ndarray     # (K,) particle index per step
    log_posterior: float
    ess_history: list
    resample_steps: list
    dp_ops: int
    goal_reached_step: int | None = None
    trellis: list = field(default_factory=list)


def ess(w) -> float:
    """Effective sample size 1 / sum(w^2) of normalized weights."""
    w = np.asarray(w, dtype=float)
    return float(1.0 / np.sum(w * w))


def systematic_resample(weights, rng, size=None) -> np.ndarray:
    """Low-variance resampling: one uniform offset, evenly spaced positions.

    Draws ``size`` indices (default: one per weight); index i appears
    floor(size*w_i) or ceil(size*w_i) times.
    """
    w = np.asarray(weights, dtype=float)
    n = size if size is not None else w.shape[0]
    positions = (np.arange(n) + rng.random()) / n
    cumulative = np.cumsum(w)
    cumulative[-1] = 1.0  # guard against round-off at the top
    return np.minimum(np.searchsorted(cumulative, positions, side="right"), w.shape[0] - 1)


def _goal_hit(task, G) -> bool:
    goal = getattr(task, "goal", None)
    if goal is None or G is None:
        return False
    return bool(np.any(goal.contains(G[:, :2])))


def plan(model, task, chain, start: AugmentedState, cfg: PlannerConfig,
         channels: VelocityChannels | None = None) -> Plan:
    """Run the forward particle/DP recursion and backtrack the MAP trajectory.

    The DP transition scores always use the passive model dynamics; guidance
    (when given) shifts only the proposal that moves particles.  Dimensions
    tagged periodic advance deterministically and are excluded from the
    transition density.
    """
    n = cfg.particle_count
    k_max = cfg.horizon
    rng = np.random.default_rng(cfg.seed)
    h = 1.0 / model.frame_rate
    d = model.latent_dim if hasattr(model, "latent_dim") else np.asarray(start.latent).shape[0]
    free = np.asarray(model.free_dims, dtype=np.int64)

    if channels is None:
        channels = VelocityChannels.from_names(getattr(model, "channel_names", None))
    use_global = start.global_pose is not None
    if use_global and channels is None:
        raise ValueError("a global start pose needs velocity channels")

    X = np.tile(np.asarray(start.latent, dtype=float), (n, 1))
    G = np.tile(start.global_pose, (n, 1)) if use_global else None
    Y, pose_var = model.decode_batch(X)

    start_cost = evaluate_cost_batch(task, chain, Y[:1], None if G is None else G[:1], 0)[0]
    if not np.isfinite(start_cost):
        warnings.warn("start state has infinite cost; emissions begin at step 1", stacklevel=2)

    delta = np.zeros(n)
    w = np.full(n, 1.0 / n)
    empty_g = np.zeros((n, 0))
    trellis: list[TrellisStep] = []
    ess_history: list[float] = []
    resample_steps: list[int] = []
    dp_ops = 0
    goal_step = None

    for k in range(1, k_max + 1):
        mu, var = model.step_distribution_batch(X)
        mu = np.asarray(mu, dtype=float)
        var = np.asarray(var, dtype=float)

        # proposal mean: passive mean, plus the guidance offset on free dims
        prop = mu.copy()
        if cfg.guidance is not None and free.size:
            u = cfg.guidance[k - 1]
            prop[:, free] += np.sqrt(var)[:, None] * u[free][None, :] * h

        eps = rng.standard_normal((n, free.size))
        X_new = prop
        if free.size:
            X_new[:, free] += np.sqrt(var)[:, None] * eps

        if use_global:
            v = Y[:, channels.indices]
            eps_g = rng.standard_normal((n, 3))
            v_noisy = v + np.sqrt(pose_var)[:, None] * eps_g
            G_mean = global_step_batch(G, v, h)       # deterministic part, for the density
            G_new = global_step_batch(G, v_noisy, h)
            g_var = h * h * pose_var
        else:
            G_mean = G_new = None
            g_var = np.zeros(n)

        Y_new, pose_var_new = model.decode_batch(X_new)

        trans = _accel.transition_scores(
            X_new,
            G_new if use_global else empty_g,
            mu,
            var,
            G_mean if use_global else empty_g,
            g_var,
            free,
        )
        val, parents = _accel.viterbi_step(delta, trans)
        dp_ops += n * n

        q = evaluate_cost_batch(task, chain, Y_new, G_new, k)
        delta_new = val - q
        w_new = w * np.exp(-q)
        total = w_new.sum()
        if total == 0.0:
            raise DegenerateWeights(k)
        w = w_new / total

        if goal_step is None and _goal_hit(task, G_new):
            goal_step = k

        ess_k = ess(w)
        ess_history.append(ess_k)
        resampled = None
        if cfg.resample_enabled and ess_k < n * cfg.resample_threshold_fraction:
            idx = systematic_resample(w, rng)
            X_new = X_new[idx]
            Y_new = Y_new[idx]
            pose_var_new = pose_var_new[idx]
            if use_global:
                G_new = G_new[idx]
            delta_new = delta_new[idx]
            parents = parents[idx]
            q = q[idx]
            w = np.full(n, 1.0 / n)
            resampled = idx
            resample_steps.append(k)

        X, Y, pose_var, delta = X_new, Y_new, pose_var_new, delta_new
        if use_global:
            G = G_new
        trellis.append(
            TrellisStep(
                latents=X.copy(),
                globals=None if G is None else G.copy(),
                poses=Y.copy(),
                pose_vars=pose_var.copy(),
                costs=q.copy(),
                dp_scores=delta.copy(),
                back_pointers=parents.copy(),
                weights=w.copy(),
                ess=ess_k,
                resample_indices=resampled,
            )
        )

    if float(delta.max()) == -np.inf:
        raise NoFeasiblePath("every terminal trellis score is -inf")

    # backtracking
    idx = int(np.argmax(delta))
    path = [idx]
    for k in range(k_max - 1, 0, -1):
        idx = int(trellis[k].back_pointers[path[-1]])
        path.append(idx)
    path.reverse()

    latents = np.stack([trellis[k].latents[path[k]] for k in range(k_max)])
    poses = np.stack([trellis[k].poses[path[k]] for k in range(k_max)])
    globals_ = (
        np.stack([trellis[k].globals[path[k]] for k in range(k_max)]) if use_global else None
    )
    step_costs = np.array([trellis[k].costs[path[k]] for k in range(k_max)])
    dp_scores = np.array([trellis[k].dp_scores[path[k]] for k in range(k_max)])

    return Plan(
        latents=latents,
        globals=globals_,
        poses=poses,
        step_costs=step_costs,
        dp_scores=dp_scores,
        path_indices=np.asarray(path),
        log_posterior=float(delta[path[-1]]),
        ess_history=ess_history,
        resample_steps=resample_steps,
        dp_ops=dp_ops,
        goal_reached_step=goal_step,
        trellis=trellis if cfg.record_trellis else [],
    )


def transition_score_matrix(model, prev: TrellisStep | None, step: TrellisStep,
                            start: AugmentedState, channels: VelocityChannels | None):
    """Recompute the DP transition table between two recorded trellis steps.

    Used by the oracle-equivalence checks: feeding these matrices (and the
    recorded costs) to the exact trellis Viterbi must reproduce the planner's
    own backtracked path and score.
    """
    n = step.latents.shape[0]
    h = 1.0 / model.frame_rate
    free = np.asarray(model.free_dims, dtype=np.int64)
    if prev is None:
        X_prev = np.tile(np.asarray(start.latent, dtype=float), (n, 1))
        G_prev = None if start.global_pose is None else np.tile(start.global_pose, (n, 1))
        Y_prev, pv_prev = model.decode_batch(X_prev)
    else:
        X_prev, G_prev, Y_prev, pv_prev = prev.latents, prev.globals, prev.poses, prev.pose_vars
    mu, var = model.step_distribution_batch(X_prev)
    use_global = step.globals is not None
    if use_global:
        v = Y_prev[:, channels.indices]
        g_mean = global_step_batch(G_prev, v, h)
        g_var = h * h * pv_prev
        return _accel.transition_scores(step.latents, step.globals, np.asarray(mu), np.asarray(var), g_mean, g_var, free)
    empty = np.zeros((n, 0))
    return _accel.transition_scores(step.latents, empty, np.asarray(mu), np.asarray(var), empty, np.zeros(X_prev.shape[0]), free)
