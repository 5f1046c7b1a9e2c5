"""Cost fields for planning: obstacles, domain bounds, forbidden ground
strips, goal distance fields, and the planar kinematic chain used for
collision checking.

Infinite cost is an ordinary value here (float inf), mapping to emission
probability exactly 0; no arithmetic trap ever fires on it.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UnreachableGoal

SQRT2 = math.sqrt(2.0)

TASK_FORMAT = "latentplan-task-v1"


@dataclass(frozen=True)
class Circle:
    center: tuple
    radius: float

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        d2 = (pts[:, 0] - self.center[0]) ** 2 + (pts[:, 1] - self.center[1]) ** 2
        return d2 <= self.radius**2


@dataclass(frozen=True)
class ConvexPolygon:
    vertices: tuple  # (V, 2), any winding; stored counter-clockwise

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.shape[0] < 3:
            raise ValueError("polygon needs at least 3 vertices")
        area2 = float(np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))
        if area2 < 0:
            v = v[::-1]
        object.__setattr__(self, "vertices", tuple(map(tuple, v)))

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        v = np.asarray(self.vertices)
        inside = np.ones(pts.shape[0], dtype=bool)
        for i in range(v.shape[0]):
            a, b = v[i], v[(i + 1) % v.shape[0]]
            cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
            inside &= cross >= 0.0
        return inside


def obstacle_from_dict(raw) -> Circle | ConvexPolygon:
    if raw["type"] == "circle":
        return Circle(tuple(raw["center"]), float(raw["radius"]))
    if raw["type"] == "polygon":
        return ConvexPolygon(tuple(map(tuple, raw["vertices"])))
    raise ValueError(f"unknown obstacle type {raw['type']!r}")


def obstacle_to_dict(obs) -> dict:
    if isinstance(obs, Circle):
        return {"type": "circle", "center": list(obs.center), "radius": obs.radius}
    return {"type": "polygon", "vertices": [list(v) for v in obs.vertices]}


@dataclass(frozen=True)
class KinematicChain:
    """Planar chain in the vertical plane through the heading direction.

    Joint angles are read from the pose at ``joint_channels`` (cumulative,
    zero meaning straight along the heading); the root sits at the global
    position, lifted by the pose value at ``root_height_channel`` when given.
    """

    link_lengths: tuple
    joint_channels: tuple
    root_height_channel: int | None = None

    def __post_init__(self):
        if len(self.link_lengths) != len(self.joint_channels):
            raise ValueError("one joint channel per link")
        object.__setattr__(self, "link_lengths", tuple(float(v) for v in self.link_lengths))
        object.__setattr__(self, "joint_channels", tuple(int(v) for v in self.joint_channels))


def forward_kinematics(chain: KinematicChain, y, g) -> np.ndarray:
    """World-frame joint positions, root first: ((links+1), 3) of x, y, z."""
    y = np.asarray(y, dtype=float)
    g = np.asarray(g, dtype=float)
    z0 = float(y[chain.root_height_channel]) if chain.root_height_channel is not None else 0.0
    pts = [(0.0, z0)]
    angle = 0.0
    s, z = 0.0, z0
    for length, ch in zip(chain.link_lengths, chain.joint_channels):
        angle += float(y[ch])
        s += length * math.cos(angle)
        z += length * math.sin(angle)
        pts.append((s, z))
    pts = np.asarray(pts)
    c, si = math.cos(g[2]), math.sin(g[2])
    out = np.empty((pts.shape[0], 3))
    out[:, 0] = g[0] + pts[:, 0] * c
    out[:, 1] = g[1] + pts[:, 0] * si
    out[:, 2] = pts[:, 1]
    return out


def _fk_batch(chain: KinematicChain, Y, G):
    """Vectorized forward kinematics: (P, links+1, 3)."""
    P = Y.shape[0]
    n = len(chain.link_lengths)
    s = np.zeros((P, n + 1))
    z = np.zeros((P, n + 1))
    if chain.root_height_channel is not None:
        z[:, 0] = Y[:, chain.root_height_channel]
    angle = np.zeros(P)
    for i, (length, ch) in enumerate(zip(chain.link_lengths, chain.joint_channels)):
        angle = angle + Y[:, ch]
        s[:, i + 1] = s[:, i] + length * np.cos(angle)
        z[:, i + 1] = z[:, i] + length * np.sin(angle)
    c = np.cos(G[:, 2])[:, None]
    si = np.sin(G[:, 2])[:, None]
    out = np.empty((P, n + 1, 3))
    out[:, :, 0] = G[:, 0][:, None] + s * c
    out[:, :, 1] = G[:, 1][:, None] + s * si
    out[:, :, 2] = z
    return out


@dataclass
class DistanceField:
    """Grid of shortest obstacle-avoiding path lengths to the goal region."""

    origin: tuple
    resolution: float
    values: np.ndarray  # (ny, nx), +inf on obstacle cells

    def query(self, pts) -> np.ndarray:
        """Bilinear interpolation over finite neighbors; queries whose four
        surrounding cells are all blocked return +inf."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ny, nx = self.values.shape
        fx = (pts[:, 0] - self.origin[0]) / self.resolution - 0.5
        fy = (pts[:, 1] - self.origin[1]) / self.resolution - 0.5
        fx = np.clip(fx, 0.0, nx - 1.000001)
        fy = np.clip(fy, 0.0, ny - 1.000001)
        ix = np.floor(fx).astype(int)
        iy = np.floor(fy).astype(int)
        ix1 = np.minimum(ix + 1, nx - 1)
        iy1 = np.minimum(iy + 1, ny - 1)
        tx = fx - ix
        ty = fy - iy
        vals = np.stack(
            [self.values[iy, ix], self.values[iy, ix1], self.values[iy1, ix], self.values[iy1, ix1]]
        )
        wts = np.stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty])
        finite = np.isfinite(vals)
        wts = np.where(finite, wts, 0.0)
        total = wts.sum(axis=0)
        out = np.full(pts.shape[0], np.inf)
        ok = total > 0
        safe_vals = np.where(finite, vals, 0.0)
        out[ok] = (wts[:, ok] * safe_vals[:, ok]).sum(axis=0) / total[ok]
        return out


COST_FAMILIES = ("corridor", "goal")


@dataclass
class Task:
    """One planning problem: geometry, cost family, weights, and horizon.

    weights (with defaults) per family:
      corridor: heading (1.0), lateral (0.01), speed (0.1), desired_heading
                (0.0), desired_lateral (0.0), desired_speed (5.0),
                forward_velocity_channel (0)
      goal:     goal (1e-5) scaling the squared distance-field value
    """

    domain: tuple  # (xmin, xmax, ymin, ymax)
    obstacles: list = field(default_factory=list)
    forbidden_strips: list = field(default_factory=list)  # (lo, hi) world-x bands
    goal: Circle | None = None
    family: str = "goal"
    weights: dict = field(default_factory=dict)
    horizon: int = 50
    resolution: float = 0.25
    contact_height: float = 0.05
    start_pose: tuple | None = None  # (x, y, heading)
    start_latent_index: int = 0
    distance_field: DistanceField | None = None

    def __post_init__(self):
        if self.family not in COST_FAMILIES:
            raise ValueError(f"unknown cost family {self.family!r}")
        if self.family == "goal":
            if self.goal is None:
                raise ValueError("goal family needs a goal circle")
            if not self._in_domain(np.asarray([self.goal.center]))[0]:
                raise ValueError("goal center must lie inside the domain")
            if self.distance_field is None:
                self.distance_field = build_distance_field(self, self.resolution)

    def _in_domain(self, pts) -> np.ndarray:
        xmin, xmax, ymin, ymax = self.domain
        return (
            (pts[:, 0] >= xmin) & (pts[:, 0] <= xmax) & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax)
        )

    def weight(self, name, default):
        return self.weights.get(name, default)

    def to_dict(self) -> dict:
        return {
            "format": TASK_FORMAT,
            "domain": list(self.domain),
            "obstacles": [obstacle_to_dict(o) for o in self.obstacles],
            "forbidden_strips": [list(s) for s in self.forbidden_strips],
            "goal": None if self.goal is None else {"center": list(self.goal.center), "radius": self.goal.radius},
            "family": self.family,
            "weights": self.weights,
            "horizon": self.horizon,
            "resolution": self.resolution,
            "contact_height": self.contact_height,
            "start": None
            if self.start_pose is None
            else {"g": list(self.start_pose), "latent_index": self.start_latent_index},
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_dict(cls, raw: dict) -> "Task":
        if raw.get("format") != TASK_FORMAT:
            raise ValueError(f"unsupported task format {raw.get('format')!r}")
        goal = None
        if raw.get("goal"):
            goal = Circle(tuple(raw["goal"]["center"]), float(raw["goal"]["radius"]))
        start = raw.get("start") or {}
        return cls(
            domain=tuple(raw["domain"]),
            obstacles=[obstacle_from_dict(o) for o in raw.get("obstacles", [])],
            forbidden_strips=[tuple(s) for s in raw.get("forbidden_strips", [])],
            goal=goal,
            family=raw.get("family", "goal"),
            weights=dict(raw.get("weights", {})),
            horizon=int(raw.get("horizon", 50)),
            resolution=float(raw.get("resolution", 0.25)),
            contact_height=float(raw.get("contact_height", 0.05)),
            start_pose=tuple(start["g"]) if "g" in start else None,
            start_latent_index=int(start.get("latent_index", 0)),
        )

    @classmethod
    def load(cls, path) -> "Task":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_distance_field(task: Task, resolution: float) -> DistanceField:
    """8-connected Dijkstra over the domain grid, seeded at free cells inside
    the goal region.  Free cells the goal cannot reach keep +inf."""
    if task.goal is None:
        raise ValueError("distance field needs a goal")
    xmin, xmax, ymin, ymax = task.domain
    nx = max(2, int(math.ceil((xmax - xmin) / resolution - 1e-9)))
    ny = max(2, int(math.ceil((ymax - ymin) / resolution - 1e-9)))
    xs = xmin + (np.arange(nx) + 0.5) * resolution
    ys = ymin + (np.arange(ny) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys)
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
    blocked = np.zeros(centers.shape[0], dtype=bool)
    for obs in task.obstacles:
        blocked |= obs.contains(centers)
    blocked = blocked.reshape(ny, nx)
    values = np.full((ny, nx), np.inf)
    in_goal = task.goal.contains(centers).reshape(ny, nx)
    seeds = np.argwhere(in_goal & ~blocked)
    if seeds.size == 0:
        raise UnreachableGoal("goal region contains no free cells")
    heap = []
    for iy, ix in seeds:
        values[iy, ix] = 0.0
        heapq.heappush(heap, (0.0, int(iy), int(ix)))
    steps = [
        (-1, -1, SQRT2), (-1, 0, 1.0), (-1, 1, SQRT2),
        (0, -1, 1.0), (0, 1, 1.0),
        (1, -1, SQRT2), (1, 0, 1.0), (1, 1, SQRT2),
    ]
    while heap:
        dist, iy, ix = heapq.heappop(heap)
        if dist > values[iy, ix]:
            continue
        for dy, dx, w in steps:
            jy, jx = iy + dy, ix + dx
            if 0 <= jy < ny and 0 <= jx < nx and not blocked[jy, jx]:
                cand = dist + w * resolution
                if cand < values[jy, jx]:
                    values[jy, jx] = cand
                    heapq.heappush(heap, (cand, jy, jx))
    return DistanceField(origin=(xmin, ymin), resolution=resolution, values=values)


def _collision_mask(task: Task, chain: KinematicChain | None, Y, G) -> np.ndarray:
    """True where any body point is inside an obstacle or the foot touches a
    forbidden strip.  With no chain the global position is the single point."""
    P = G.shape[0]
    if chain is None:
        pts = G[:, :2][:, None, :]  # (P, 1, 2)
        foot_xy = G[:, :2]
        foot_z = np.zeros(P)
    else:
        fk = _fk_batch(chain, Y, G)
        pts = fk[:, :, :2]
        foot_xy = fk[:, -1, :2]
        foot_z = fk[:, -1, 2]
    hit = np.zeros(P, dtype=bool)
    flat = pts.reshape(-1, 2)
    for obs in task.obstacles:
        hit |= obs.contains(flat).reshape(P, -1).any(axis=1)
    if task.forbidden_strips:
        contact = foot_z <= task.contact_height
        for lo, hi in task.forbidden_strips:
            hit |= contact & (foot_xy[:, 0] >= lo) & (foot_xy[:, 0] <= hi)
    return hit


def cost_batch(task: Task, chain: KinematicChain | None, Y, G, k: int) -> np.ndarray:
    """Vectorized task cost over P particles; +inf marks collision or, for the
    goal family, leaving the domain."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    P = G.shape[0]
    q = np.zeros(P)
    hit = _collision_mask(task, chain, Y, G)
    if task.family == "corridor":
        w_h = task.weight("heading", 1.0)
        w_lat = task.weight("lateral", 0.01)
        w_v = task.weight("speed", 0.1)
        th_d = task.weight("desired_heading", 0.0)
        lat_d = task.weight("desired_lateral", 0.0)
        v_d = task.weight("desired_speed", 5.0)
        vch = int(task.weight("forward_velocity_channel", 0))
        q += w_h * (G[:, 2] - th_d) ** 2
        q += w_lat * np.abs(G[:, 1] - lat_d)
        q += w_v * (Y[:, vch] - v_d) ** 2
    else:
        out = ~task._in_domain(G[:, :2])
        q[out] = np.inf
        w_goal = task.weight("goal", 1e-5)
        dist = task.distance_field.query(G[:, :2])
        q = q + w_goal * dist**2
    q[hit] = np.inf
    return q


def cost(task, chain, y, g, k: int) -> float:
    """Scalar task cost; ``task`` may also be a callable (y, g, k) -> cost,
    which lets toy problems bypass the geometry entirely."""
    if callable(task):
        return float(task(y, g, k))
    return float(cost_batch(task, chain, np.atleast_2d(y), np.atleast_2d(g), k)[0])


def evaluate_cost_batch(task, chain, Y, G, k: int) -> np.ndarray:
    """Batch dispatch used by the planner; falls back to a per-row loop for
    callable tasks."""
    if callable(task):
        Y = np.atleast_2d(Y)
        n = Y.shape[0]
        G_rows = [None] * n if G is None else np.atleast_2d(G)
        return np.array([float(task(Y[i], G_rows[i], k)) for i in range(n)])
    return cost_batch(task, chain, Y, G, k)
