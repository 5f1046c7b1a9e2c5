"""Latent variable model with dynamics: MAP training of latent coordinates,
kernel hyperparameters, and (optionally) back-constraint weights.

The objective is the log of the joint density of observations given latents,
latents given the dynamics kernel, and the scale-free hyperparameter priors.
Observation rows are mean-centered per channel before anything else touches
them; offsets live on the trained model so decoding can undo the shift.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FactorizationFailure, MissingPhase, NonFiniteObjective
from .gp_core import GramCache, KernelParams, gp_posterior_batch, gram

LOG_PARAM_BOUND = 10.0
_BC_RIDGE = 1e-6

ROLE_FREE = "free"
ROLE_COS = "periodic-cos"
ROLE_SIN = "periodic-sin"

MODEL_FORMAT = "latentplan-model-v1"


@dataclass(frozen=True)
class MotionDataset:
    """Frames of high-dimensional observations with sequence boundaries.

    observations: (N, D); sequence_starts: sorted row indices, first is 0,
    every sequence at least 2 frames long; phase: optional (N,) radians.
    """

    observations: np.ndarray
    sequence_starts: tuple
    phase: np.ndarray | None = None
    frame_rate: float = 30.0
    channel_names: tuple | None = None

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        object.__setattr__(self, "observations", obs)
        starts = tuple(int(s) for s in self.sequence_starts)
        object.__setattr__(self, "sequence_starts", starts)
        n = obs.shape[0]
        if not starts or starts[0] != 0:
            raise ValueError("sequence_starts must begin with 0")
        if list(starts) != sorted(set(starts)) or starts[-1] >= n:
            raise ValueError("sequence_starts must be strictly increasing and < N")
        for length in self.sequence_lengths():
            if length < 2:
                raise ValueError("every sequence needs at least 2 frames")
        if self.phase is not None:
            phase = np.asarray(self.phase, dtype=float)
            if phase.shape != (n,):
                raise ValueError("phase must be one angle per frame")
            object.__setattr__(self, "phase", phase)

    @property
    def n_frames(self) -> int:
        return self.observations.shape[0]

    @property
    def n_channels(self) -> int:
        return self.observations.shape[1]

    def sequence_lengths(self):
        bounds = list(self.sequence_starts) + [self.observations.shape[0]]
        return [bounds[i + 1] - bounds[i] for i in range(len(self.sequence_starts))]


def transition_indices(sequence_starts, n):
    """Row indices (inputs, targets) of every within-sequence transition."""
    starts = list(sequence_starts) + [n]
    ins, outs = [], []
    for a, b in zip(starts[:-1], starts[1:]):
        ins.extend(range(a, b - 1))
        outs.extend(range(a + 1, b))
    return np.asarray(ins), np.asarray(outs)


@dataclass(frozen=True)
class BackConstraintSpec:
    """Per-latent-dimension smooth mappings from data to latent coordinates.

    kinds: one of "rbf", "periodic-cos", "periodic-sin" per dimension.
    widths: kernel width per dimension, or None for the median heuristic.
    """

    kinds: tuple
    widths: tuple | None = None

    def __post_init__(self):
        for k in self.kinds:
            if k not in ("rbf", ROLE_COS, ROLE_SIN):
                raise ValueError(f"unknown back-constraint kind {k!r}")
        if self.widths is not None and len(self.widths) != len(self.kinds):
            raise ValueError("one width per latent dimension")

    @property
    def latent_dim(self) -> int:
        return len(self.kinds)


def _median_width(values_2d):
    # median pairwise distance; subsample large sets for O(n^2) safety
    v = values_2d if values_2d.shape[0] <= 500 else values_2d[:: values_2d.shape[0] // 500 + 1]
    d2 = np.sum((v[:, None, :] - v[None, :, :]) ** 2, axis=-1)
    med = math.sqrt(float(np.median(d2[np.triu_indices(v.shape[0], k=1)])))
    return med if med > 0 else 1.0


def _bc_feature_rows(kind, observations, phase):
    if kind == "rbf":
        return observations
    if phase is None:
        raise MissingPhase("periodic back-constraints need a dataset phase column")
    if kind == ROLE_COS:
        return np.cos(phase)[:, None]
    return np.sin(phase)[:, None]


def build_back_constraint_maps(spec: BackConstraintSpec, data: MotionDataset):
    """Mapping matrices Phi_j (one per latent dim), X[:, j] = Phi_j @ weights_j.

    A small ridge on the diagonal keeps every Phi_j invertible so weights can
    reproduce any initialization exactly.  Returns (list of Phi, widths used).
    """
    obs_c = data.observations - data.observations.mean(axis=0)
    maps, widths = [], []
    for j, kind in enumerate(spec.kinds):
        rows = _bc_feature_rows(kind, obs_c, data.phase)
        w = spec.widths[j] if spec.widths is not None and spec.widths[j] else _median_width(rows)
        d2 = np.sum((rows[:, None, :] - rows[None, :, :]) ** 2, axis=-1)
        phi = np.exp(-0.5 * d2 / (w * w))
        phi[np.diag_indices(rows.shape[0])] += _BC_RIDGE
        maps.append(phi)
        widths.append(float(w))
    return maps, widths


@dataclass
class BackConstraints:
    spec: BackConstraintSpec
    widths: list
    weights: np.ndarray            # (N, d), column j weighs Phi_j
    maps: list = field(repr=False, default=None)

    def latent(self) -> np.ndarray:
        cols = [self.maps[j] @ self.weights[:, j] for j in range(self.weights.shape[1])]
        return np.stack(cols, axis=1)


@dataclass(frozen=True)
class TrainConfig:
    latent_dim: int
    iterations: int = 150
    back_constraints: BackConstraintSpec | None = None
    seed: int = 0
    head_prior_std: float = 1.0
    init_dyn_params: KernelParams = KernelParams(1.0, 1.0, 100.0)
    init_map_params: KernelParams = KernelParams(1.0, 1.0, 100.0)
    init_step: float = 1e-3
    max_backtracks: int = 25


class LatentModel:
    """Trained generative model: latent path, kernels, caches, and offsets.

    Treat instances as immutable; caches are safe to share across threads.
    """

    def __init__(
        self,
        latent,
        dyn_params: KernelParams,
        map_params: KernelParams,
        observations_centered,
        channel_offsets,
        sequence_starts,
        frame_rate: float,
        latent_dim_roles,
        phase=None,
        back_constraints: BackConstraints | None = None,
        channel_names=None,
    ):
        self.latent = np.asarray(latent, dtype=float)
        self.dyn_params = dyn_params
        self.map_params = map_params
        self.observations_centered = np.asarray(observations_centered, dtype=float)
        self.channel_offsets = np.asarray(channel_offsets, dtype=float)
        self.sequence_starts = tuple(int(s) for s in sequence_starts)
        self.frame_rate = float(frame_rate)
        self.latent_dim_roles = tuple(latent_dim_roles)
        self.phase = None if phase is None else np.asarray(phase, dtype=float)
        self.back_constraints = back_constraints
        self.channel_names = None if channel_names is None else tuple(channel_names)
        self._rebuild_caches()

    def _rebuild_caches(self):
        n = self.latent.shape[0]
        ins, outs = transition_indices(self.sequence_starts, n)
        self.dyn_inputs = self.latent[ins]
        self.dyn_targets = self.latent[outs]
        self.kx_cache = gram(self.dyn_inputs, self.dyn_params, targets=self.dyn_targets)
        self.ky_cache = gram(self.latent, self.map_params, targets=self.observations_centered)

    @property
    def n_frames(self) -> int:
        return self.latent.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.latent.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.observations_centered.shape[1]

    @property
    def free_dims(self) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.latent_dim_roles) if r == ROLE_FREE])

    def step_distribution_batch(self, X):
        """Latent step means (P, d) and scalar variances (P,)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return gp_posterior_batch(X, self.dyn_inputs, self.dyn_targets, self.kx_cache, self.dyn_params)

    def decode_batch(self, X):
        """Decoded poses (P, D) with channel offsets restored, plus scalar
        pose variances (P,)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mean, var = gp_posterior_batch(
            X, self.latent, self.observations_centered, self.ky_cache, self.map_params
        )
        return mean + self.channel_offsets, var

    def to_dict(self) -> dict:
        bc = None
        if self.back_constraints is not None:
            bc = {
                "kinds": list(self.back_constraints.spec.kinds),
                "widths": list(self.back_constraints.widths),
                "weights": self.back_constraints.weights.tolist(),
            }
        return {
            "format": MODEL_FORMAT,
            "latent": self.latent.tolist(),
            "dyn_params": vars(self.dyn_params),
            "map_params": vars(self.map_params),
            "observations_centered": self.observations_centered.tolist(),
            "channel_offsets": self.channel_offsets.tolist(),
            "sequence_starts": list(self.sequence_starts),
            "frame_rate": self.frame_rate,
            "latent_dim_roles": list(self.latent_dim_roles),
            "phase": None if self.phase is None else self.phase.tolist(),
            "back_constraints": bc,
            "channel_names": None if self.channel_names is None else list(self.channel_names),
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, payload: dict) -> "LatentModel":
        if payload.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {payload.get('format')!r}")
        bc = None
        if payload.get("back_constraints"):
            raw = payload["back_constraints"]
            spec = BackConstraintSpec(tuple(raw["kinds"]), tuple(raw["widths"]))
            bc = BackConstraints(
                spec=spec,
                widths=list(raw["widths"]),
                weights=np.asarray(raw["weights"], dtype=float),
                maps=None,
            )
        return cls(
            latent=payload["latent"],
            dyn_params=KernelParams(**payload["dyn_params"]),
            map_params=KernelParams(**payload["map_params"]),
            observations_centered=payload["observations_centered"],
            channel_offsets=payload["channel_offsets"],
            sequence_starts=payload["sequence_starts"],
            frame_rate=payload["frame_rate"],
            latent_dim_roles=payload["latent_dim_roles"],
            phase=payload.get("phase"),
            back_constraints=bc,
            channel_names=payload.get("channel_names"),
        )

    @classmethod
    def load(cls, path) -> "LatentModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- objective and gradients --------------------------------------------------


def _gauss_term(cache: GramCache, targets):
    """log-density term for one GP block: targets columns share the kernel."""
    n, c = targets.shape
    fit = float(np.sum(targets * cache.inv_times_targets))
    return -0.5 * c * cache.log_det - 0.5 * fit - 0.5 * n * c * math.log(2.0 * math.pi)


def objective_terms(X, Yc, sequence_starts, dyn_params, map_params, head_prior_std=1.0):
    """Breakdown of the training objective for the given state.

    Returns a dict with keys data_fit, dynamics, heads, prior and the two
    GramCaches (reused by the gradient).  Raises FactorizationFailure from
    degenerate kernels.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    ins, outs = transition_indices(sequence_starts, n)
    ky = gram(X, map_params, targets=Yc)
    kx = gram(X[ins], dyn_params, targets=X[outs])
    heads = 0.0
    s2 = head_prior_std**2
    for s in sequence_starts:
        heads += -0.5 * float(X[s] @ X[s]) / s2 - 0.5 * X.shape[1] * math.log(2.0 * math.pi * s2)
    prior = -float(np.sum(dyn_params.log_array())) - float(np.sum(map_params.log_array()))
    return {
        "data_fit": _gauss_term(ky, Yc),
        "dynamics": _gauss_term(kx, X[outs]),
        "heads": heads,
        "prior": prior,
        "_ky": ky,
        "_kx": kx,
        "_ins": ins,
        "_outs": outs,
    }


def log_map_objective(model: LatentModel, data: MotionDataset) -> float:
    """Training objective of a model against its dataset (higher is better)."""
    Yc = data.observations - model.channel_offsets
    terms = objective_terms(
        model.latent, Yc, data.sequence_starts, model.dyn_params, model.map_params
    )
    return terms["data_fit"] + terms["dynamics"] + terms["heads"] + terms["prior"]


def _block_gradients(cache: GramCache, rows, params: KernelParams, d2=None):
    """dL/dK pieces for one GP block.

    Returns (G, dX_rows, dlog_params) where G is the matrix gradient,
    dX_rows the gradient through the kernel inputs, and dlog_params the
    3-vector for (log amplitude, log inverse_lengthscale, log precision),
    prior contribution not included.
    """
    n, c = cache.inv_times_targets.shape
    B = cache.inv_times_targets
    Kinv = cache.solve(np.eye(n))
    G = -0.5 * c * Kinv + 0.5 * (B @ B.T)
    E = cache.gram - np.eye(n) / params.noise_precision  # amplitude * exp(...) part
    H = G * E
    rs = H.sum(axis=1)
    dX_rows = -2.0 * params.inverse_lengthscale * (rs[:, None] * rows - H @ rows)
    if d2 is None:
        diff = rows[:, None, :] - rows[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
    dlog = np.array(
        [
            float(np.sum(H)),
            -0.5 * params.inverse_lengthscale * float(np.sum(H * d2)),
            -float(np.trace(G)) / params.noise_precision,
        ]
    )
    return G, dX_rows, dlog


def grad_map_objective(X, Yc, sequence_starts, dyn_params, map_params, head_prior_std=1.0):
    """Analytic gradients of the objective w.r.t. (X, log alpha, log beta).

    Returns (value, dX (N, d), dlog_dyn (3,), dlog_map (3,)).
    """
    terms = objective_terms(X, Yc, sequence_starts, dyn_params, map_params, head_prior_std)
    value = terms["data_fit"] + terms["dynamics"] + terms["heads"] + terms["prior"]
    X = np.asarray(X, dtype=float)
    ins, outs = terms["_ins"], terms["_outs"]

    _, dY_rows, dlog_map = _block_gradients(terms["_ky"], X, map_params)
    dX = dY_rows
    _, dXin_rows, dlog_dyn = _block_gradients(terms["_kx"], X[ins], dyn_params)
    np.add.at(dX, ins, dXin_rows)
    np.add.at(dX, outs, -terms["_kx"].inv_times_targets)
    for s in sequence_starts:
        dX[s] -= X[s] / head_prior_std**2
    dlog_dyn = dlog_dyn - 1.0  # scale-free hyperprior, in log space
    dlog_map = dlog_map - 1.0
    return value, dX, dlog_dyn, dlog_map


# -- initialization ------------------------------------------------------------


def pca_projection(Yc, k):
    """Top-k principal projection of centered data.

    Returns (scores (N, k), components (D, k), eigenvalues (k,)); component
    signs are fixed so the largest-magnitude loading is positive.
    """
    cov = (Yc.T @ Yc) / Yc.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    comps = evecs[:, order]
    for j in range(comps.shape[1]):
        i = np.argmax(np.abs(comps[:, j]))
        if comps[i, j] < 0:
            comps[:, j] = -comps[:, j]
    return Yc @ comps, comps, evals[order]


def latent_roles(d, spec: BackConstraintSpec | None):
    if spec is None:
        return tuple([ROLE_FREE] * d)
    return tuple(k if k in (ROLE_COS, ROLE_SIN) else ROLE_FREE for k in spec.kinds)


def init_latent(data: MotionDataset, d: int, spec: BackConstraintSpec | None = None):
    """Initial latent coordinates: PCA scores (unit variance per free
    dimension) and (cos, sin) of the phase for periodic dimensions."""
    if d > data.n_channels:
        raise ValueError("latent dimension exceeds observation dimension")
    if spec is not None and spec.latent_dim != d:
        raise ValueError("back-constraint spec does not match latent dimension")
    roles = latent_roles(d, spec)
    if any(r != ROLE_FREE for r in roles) and data.phase is None:
        raise MissingPhase("periodic latent dimensions need a dataset phase column")
    Yc = data.observations - data.observations.mean(axis=0)
    X = np.zeros((data.n_frames, d))
    free = [i for i, r in enumerate(roles) if r == ROLE_FREE]
    if free:
        scores, _, _ = pca_projection(Yc, len(free))
        std = scores.std(axis=0)
        std[std == 0] = 1.0
        X[:, free] = scores / std
    for i, r in enumerate(roles):
        if r == ROLE_COS:
            X[:, i] = np.cos(data.phase)
        elif r == ROLE_SIN:
            X[:, i] = np.sin(data.phase)
    return X


# -- training ------------------------------------------------------------------


class _ParamVector:
    """Pack/unpack the optimization state into one flat vector."""

    def __init__(self, data: MotionDataset, cfg: TrainConfig, bc_maps):
        self.n = data.n_frames
        self.d = cfg.latent_dim
        self.bc_maps = bc_maps
        self.coord_size = self.n * self.d

    def pack(self, coords, log_dyn, log_map):
        return np.concatenate([coords.ravel(), log_dyn, log_map])

    def unpack(self, vec):
        coords = vec[: self.coord_size].reshape(self.n, self.d)
        log_dyn = vec[self.coord_size : self.coord_size + 3]
        log_map = vec[self.coord_size + 3 :]
        return coords, log_dyn, log_map

    def latent_of(self, coords):
        if self.bc_maps is None:
            return coords
        cols = [self.bc_maps[j] @ coords[:, j] for j in range(self.d)]
        return np.stack(cols, axis=1)

    def chain_to_coords(self, dX):
        if self.bc_maps is None:
            return dX
        cols = [self.bc_maps[j].T @ dX[:, j] for j in range(self.d)]
        return np.stack(cols, axis=1)


def _clip_logs(vec, coord_size):
    out = vec.copy()
    out[coord_size:] = np.clip(out[coord_size:], -LOG_PARAM_BOUND, LOG_PARAM_BOUND)
    return out


def train(data: MotionDataset, config: TrainConfig):
    """MAP training by gradient ascent with a backtracking line search.

    Accepted steps are monotone non-decreasing in the objective.  Returns
    (model, history) where history is the list of accepted objective values,
    entry 0 being the initialization.
    """
    offsets = data.observations.mean(axis=0)
    Yc = data.observations - offsets
    X0 = init_latent(data, config.latent_dim, config.back_constraints)
    roles = latent_roles(config.latent_dim, config.back_constraints)

    bc_maps = bc_widths = None
    if config.back_constraints is not None:
        bc_maps, bc_widths = build_back_constraint_maps(config.back_constraints, data)
        weights0 = np.stack(
            [np.linalg.solve(bc_maps[j], X0[:, j]) for j in range(config.latent_dim)], axis=1
        )
        coords = weights0
    else:
        coords = X0

    pv = _ParamVector(data, config, bc_maps)
    theta = pv.pack(coords, config.init_dyn_params.log_array(), config.init_map_params.log_array())
    theta = _clip_logs(theta, pv.coord_size)

    def evaluate(vec, with_grad):
        coords, log_dyn, log_map = pv.unpack(vec)
        dyn = KernelParams.from_log_array(log_dyn)
        mp = KernelParams.from_log_array(log_map)
        X = pv.latent_of(coords)
        try:
            if not with_grad:
                t = objective_terms(X, Yc, data.sequence_starts, dyn, mp, config.head_prior_std)
                return t["data_fit"] + t["dynamics"] + t["heads"] + t["prior"], None
            val, dX, dld, dlm = grad_map_objective(
                X, Yc, data.sequence_starts, dyn, mp, config.head_prior_std
            )
            return val, pv.pack(pv.chain_to_coords(dX), dld, dlm)
        except FactorizationFailure:
            return -np.inf, None

    value, grad_vec = evaluate(theta, with_grad=True)
    if not np.isfinite(value):
        raise NonFiniteObjective("objective not finite at initialization; rescale the data")
    history = [value]
    step = config.init_step

    for _ in range(config.iterations):
        if grad_vec is None or not np.all(np.isfinite(grad_vec)):
            break
        accepted = False
        for _ in range(config.max_backtracks):
            candidate = _clip_logs(theta + step * grad_vec, pv.coord_size)
            cand_val, _ = evaluate(candidate, with_grad=False)
            if np.isfinite(cand_val) and cand_val > value:
                theta, value = candidate, cand_val
                step *= 1.4
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        history.append(value)
        value, grad_vec = evaluate(theta, with_grad=True)

    coords, log_dyn, log_map = pv.unpack(theta)
    back = None
    if config.back_constraints is not None:
        back = BackConstraints(
            spec=config.back_constraints, widths=bc_widths, weights=coords, maps=bc_maps
        )
    model = LatentModel(
        latent=pv.latent_of(coords),
        dyn_params=KernelParams.from_log_array(log_dyn),
        map_params=KernelParams.from_log_array(log_map),
        observations_centered=Yc,
        channel_offsets=offsets,
        sequence_starts=data.sequence_starts,
        frame_rate=data.frame_rate,
        latent_dim_roles=roles,
        phase=data.phase,
        back_constraints=back,
        channel_names=data.channel_names,
    )
    return model, history
