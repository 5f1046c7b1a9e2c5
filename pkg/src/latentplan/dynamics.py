"""The learned generative system: stochastic latent stepping, pose decoding,
and the planar global frame integrated from decoded velocity channels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lvm import ROLE_FREE

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(theta, dtype=float) + np.pi, TWO_PI) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.isscalar(theta) or np.ndim(theta) == 0 else w


@dataclass(frozen=True)
class AugmentedState:
    """Latent point plus planar global frame (x, y, heading); the frame is
    None for tasks that are not about locomotion."""

    latent: np.ndarray
    global_pose: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "latent", np.asarray(self.latent, dtype=float))
        if self.global_pose is not None:
            g = np.asarray(self.global_pose, dtype=float).copy()
            if g.shape != (3,):
                raise ValueError("global pose is (x, y, heading)")
            g[2] = wrap_angle(g[2])
            object.__setattr__(self, "global_pose", g)


@dataclass(frozen=True)
class VelocityChannels:
    """Observation channel indices for forward velocity, lateral velocity,
    and yaw rate."""

    forward: int
    lateral: int
    yaw_rate: int

    def __post_init__(self):
        idx = (self.forward, self.lateral, self.yaw_rate)
        if len(set(idx)) != 3 or min(idx) < 0:
            raise ValueError("velocity channel indices must be distinct and non-negative")

    @property
    def indices(self) -> np.ndarray:
        return np.array([self.forward, self.lateral, self.yaw_rate])

    @classmethod
    def from_names(cls, channel_names) -> "VelocityChannels | None":
        if channel_names is None:
            return None
        names = list(channel_names)
        try:
            return cls(names.index("v_fwd"), names.index("v_lat"), names.index("yaw_rate"))
        except ValueError:
            return None


def latent_step_distribution(model, x):
    """Mean and covariance of one stochastic latent step.

    The covariance is the scalar GP variance on every free dimension; rows and
    columns of dimensions tagged periodic are exactly zero (their advance uses
    the learned mean only).
    """
    mean, var = model.step_distribution_batch(np.atleast_2d(x))
    d = mean.shape[1]
    roles = getattr(model, "latent_dim_roles", (ROLE_FREE,) * d)
    cov = np.zeros((d, d))
    for i, role in enumerate(roles):
        if role == ROLE_FREE:
            cov[i, i] = var[0]
    return mean[0], cov


def decode_pose(model, x, with_noise=False, rng=None):
    """Posterior-mean pose at a latent point; optional isotropic noise."""
    mean, var = model.decode_batch(np.atleast_2d(x))
    pose = mean[0]
    if with_noise:
        if rng is None:
            raise ValueError("with_noise requires an rng")
        pose = pose + math.sqrt(max(float(var[0]), 0.0)) * rng.standard_normal(pose.shape)
    return pose


def heading_rotation(theta) -> np.ndarray:
    """Planar rotation acting on (forward, lateral, yaw-rate) triples: the
    velocity pair rotates, the yaw rate passes through."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def global_step(g, y, var_v, noise, channels: VelocityChannels, h: float):
    """Advance the global frame one step of length h seconds.

    g + h * R_heading(v + sqrt(var_v) * noise) with the heading re-wrapped;
    v is read from the pose's velocity channels.
    """
    g = np.asarray(g, dtype=float)
    v = np.asarray(y, dtype=float)[channels.indices] + np.sqrt(
        np.asarray(var_v, dtype=float)
    ) * np.asarray(noise, dtype=float)
    world = heading_rotation(g[2]) @ v
    out = g + h * world
    out[2] = wrap_angle(out[2])
    return out


def global_step_batch(G, V_noisy, h):
    """Vectorized frame advance: G (P, 3), V_noisy (P, 3) in body coordinates."""
    c = np.cos(G[:, 2])
    s = np.sin(G[:, 2])
    out = np.empty_like(G)
    out[:, 0] = G[:, 0] + h * (c * V_noisy[:, 0] - s * V_noisy[:, 1])
    out[:, 1] = G[:, 1] + h * (s * V_noisy[:, 0] + c * V_noisy[:, 1])
    out[:, 2] = wrap_angle(G[:, 2] + h * V_noisy[:, 2])
    return out


def rollout_mean(model, x0, steps: int) -> np.ndarray:
    """Deterministic latent rollout under the mean dynamics; (steps+1, d)."""
    x = np.asarray(x0, dtype=float)
    path = [x]
    for _ in range(steps):
        mean, _ = model.step_distribution_batch(x[None, :])
        x = mean[0]
        path.append(x)
    return np.asarray(path)
