"""Reproducible synthetic motion data with known ground truth.

A low-dimensional limit-cycle oracle (circle, lissajous, or two gaits joined
by a transition arc) is lifted through a fixed, seeded, smooth map into the
observation channels.  The first channels are always the body-frame velocity
triple - forward, lateral, yaw rate - so the generated motions integrate into
a planar path; a root-height channel and swinging joint channels follow, and
any remaining channels are bounded sinusoidal features of the oracle state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lvm import MotionDataset

TWO_PI = 2.0 * math.pi

KINDS = ("circle", "lissajous", "two-gait", "turning")


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str = "two-gait"
    n_channels: int = 12
    noise_std: float = 0.01
    frames_per_cycle: int = 72
    n_cycles: int = 2
    turn_amplitude: float = 0.0
    turn_levels: int = 3  # turning kind: number of constant-yaw sequences
    seed: int = 0
    frame_rate: float = 30.0
    slow_speed: float = 0.8
    fast_speed: float = 1.6

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.n_channels < 4:
            raise ValueError("need at least 4 channels (3 velocities + 1 joint)")
        if self.frames_per_cycle < 8 or self.n_cycles < 1:
            raise ValueError("degenerate cycle configuration")
        if self.kind == "turning" and self.turn_levels < 2:
            raise ValueError("turning data needs at least 2 yaw levels")


def channel_names(n_channels: int):
    names = ["v_fwd", "v_lat", "yaw_rate"]
    if n_channels >= 5:
        names.append("root_z")
    n_joints = min(3, n_channels - len(names))
    names += [f"joint_{i}" for i in range(n_joints)]
    names += [f"feat_{i}" for i in range(n_channels - len(names))]
    return names


def _gait_profile(spec: GeneratorSpec):
    """Per-frame phase and gait mix s in [0, 1] (two-gait ramps through a
    half-cycle bridge; the other kinds stay at 0)."""
    F = spec.frames_per_cycle
    if spec.kind == "two-gait":
        bridge = F // 2
        n = 2 * spec.n_cycles * F + bridge
        t = np.arange(n)
        s = np.zeros(n)
        a_end = spec.n_cycles * F
        ramp = (t[a_end : a_end + bridge] - a_end + 0.5) / bridge
        s[a_end : a_end + bridge] = 0.5 - 0.5 * np.cos(np.pi * ramp)
        s[a_end + bridge :] = 1.0
    else:
        n = spec.n_cycles * F
        t = np.arange(n)
        s = np.zeros(n)
    phase = TWO_PI * (t % F) / F
    return t, phase, s


def _turning_profile(spec: GeneratorSpec):
    """Mirror-paired sequences at constant yaw rates, each a closed gait
    cycle.  Levels come in +-pairs (plus a zero pair when turn_levels is odd)
    so the dataset is exactly symmetric under left/right reflection; the
    channel noise is mirrored across each pair for the same reason (a biased
    noise draw would otherwise teach the dynamics a systematic drift)."""
    F = spec.frames_per_cycle
    per_seq = spec.n_cycles * F
    half = spec.turn_levels // 2
    mags = [spec.turn_amplitude * (i + 1) / half for i in range(half)] if half else []
    levels = ([0.0, 0.0] if spec.turn_levels % 2 else [])
    for m in mags:
        levels.extend([m, -m])
    n_seq = len(levels)
    t = np.tile(np.arange(per_seq), n_seq)
    phase = TWO_PI * (t % F) / F
    yaw = np.repeat(levels, per_seq)
    starts = tuple(i * per_seq for i in range(n_seq))
    return t, phase, yaw, starts


def generate(spec: GeneratorSpec):
    """Build the dataset and its ground truth.

    Returns (MotionDataset, truth) where truth holds the oracle latent path,
    phase, per-frame gait mix, speed, and (for two-gait) cluster labels with
    -1 on the bridge frames.
    """
    rng = np.random.default_rng(spec.seed)
    starts = (0,)
    if spec.kind == "turning":
        t, phase, yaw, starts = _turning_profile(spec)
        s = np.zeros(t.shape[0])
    else:
        t, phase, s = _gait_profile(spec)
    n = t.shape[0]
    F = spec.frames_per_cycle

    if spec.kind == "lissajous":
        z = np.stack([np.sin(phase + 0.4), np.sin(2.0 * phase)], axis=1)
    else:
        radius = 1.0 + 0.6 * s
        z = np.stack([radius * np.cos(phase), radius * np.sin(phase)], axis=1)

    speed = spec.slow_speed + (spec.fast_speed - spec.slow_speed) * s
    v_fwd = speed * (1.0 + 0.05 * np.sin(2.0 * phase))
    v_lat = np.zeros(n)
    if spec.kind == "two-gait":
        yaw = spec.turn_amplitude * np.sin(TWO_PI * t / (3.0 * F))
    elif spec.kind != "turning":
        yaw = spec.turn_amplitude * np.sin(phase)

    names = channel_names(spec.n_channels)
    Y = np.zeros((n, spec.n_channels))
    Y[:, 0], Y[:, 1], Y[:, 2] = v_fwd, v_lat, yaw
    col = 3
    if "root_z" in names:
        Y[:, col] = 0.5 + 0.03 * (1.0 + s) * np.cos(2.0 * phase)
        col += 1
    n_joints = sum(1 for nm in names if nm.startswith("joint_"))
    for j in range(n_joints):
        amp = 0.4 * (1.0 + 0.8 * s)
        Y[:, col] = amp * np.sin(phase + 0.7 * j) + 0.6 * s * (j % 2 * 2 - 1)
        col += 1
    n_feats = spec.n_channels - col
    if n_feats > 0:
        # fixed seeded lift: bounded sums of sinusoids over the oracle state
        W = rng.normal(size=(n_feats, 3, 2))
        b = rng.uniform(0.0, TWO_PI, size=(n_feats, 3))
        a = rng.uniform(0.4, 1.0, size=(n_feats, 3))
        gate = rng.uniform(0.6, 1.1, size=n_feats) * rng.choice([-1.0, 1.0], size=n_feats)
        for f in range(n_feats):
            feat = sum(a[f, j] * np.sin(z @ W[f, j] + b[f, j]) for j in range(3))
            Y[:, col + f] = feat / math.sqrt(3.0) + gate[f] * s

    if spec.noise_std > 0:
        noise = rng.normal(0.0, spec.noise_std, size=Y.shape)
        if spec.kind == "turning":
            # mirror the noise across each +-yaw sequence pair: odd channels
            # (lateral velocity, yaw rate) flip sign, the rest copy over
            parity = np.array([-1.0 if nm in ("v_lat", "yaw_rate") else 1.0 for nm in names])
            per_seq = n // len(starts)
            for pair in range(len(starts) // 2):
                src = slice(2 * pair * per_seq, (2 * pair + 1) * per_seq)
                dst = slice((2 * pair + 1) * per_seq, (2 * pair + 2) * per_seq)
                noise[dst] = noise[src] * parity
        Y = Y + noise

    labels = np.full(n, -1)
    if spec.kind == "two-gait":
        labels[s == 0.0] = 0
        labels[s == 1.0] = 1
    elif spec.kind == "turning":
        per_seq = n // len(starts)
        labels = np.repeat(np.arange(len(starts)), per_seq)
    else:
        labels[:] = 0

    data = MotionDataset(
        observations=Y,
        sequence_starts=starts,
        phase=phase,
        frame_rate=spec.frame_rate,
        channel_names=tuple(names),
    )
    truth = {
        "latent": z,
        "phase": phase,
        "gait_mix": s,
        "labels": labels,
        "speed": speed,
        "yaw_rate": yaw,
    }
    return data, truth
