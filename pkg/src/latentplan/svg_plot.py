"""Top-down SVG rendering of a plan: domain, obstacles, goal, trajectory, and
a few particle-cloud snapshots.  Plain text emission, no plotting dependency."""

from __future__ import annotations

import numpy as np

from .tasks import Circle, ConvexPolygon

_CLOUD_COLORS = ("#9ecae1", "#6baed6", "#3182bd", "#08519c")


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def plan_svg(task, plan, width: int = 640) -> str:
    xmin, xmax, ymin, ymax = task.domain
    span_x = xmax - xmin
    span_y = ymax - ymin
    height = int(round(width * span_y / span_x))
    scale = width / span_x

    def sx(x):
        return _fmt((x - xmin) * scale)

    def sy(y):
        # svg y grows downward
        return _fmt((ymax - y) * scale)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#fafafa" stroke="#333"/>',
    ]
    for lo, hi in task.forbidden_strips:
        parts.append(
            f'<rect x="{sx(lo)}" y="0" width="{_fmt((hi - lo) * scale)}" height="{height}" '
            f'fill="#fdd" stroke="none"/>'
        )
    for obs in task.obstacles:
        if isinstance(obs, Circle):
            parts.append(
                f'<circle cx="{sx(obs.center[0])}" cy="{sy(obs.center[1])}" '
                f'r="{_fmt(obs.radius * scale)}" fill="#bbb" stroke="#555"/>'
            )
        elif isinstance(obs, ConvexPolygon):
            pts = " ".join(f"{sx(v[0])},{sy(v[1])}" for v in obs.vertices)
            parts.append(f'<polygon points="{pts}" fill="#bbb" stroke="#555"/>')
    if task.goal is not None:
        parts.append(
            f'<circle cx="{sx(task.goal.center[0])}" cy="{sy(task.goal.center[1])}" '
            f'r="{_fmt(task.goal.radius * scale)}" fill="none" stroke="#111" stroke-width="2"/>'
        )
    if plan.trellis:
        snaps = np.linspace(0, len(plan.trellis) - 1, num=min(4, len(plan.trellis)), dtype=int)
        for color, k in zip(_CLOUD_COLORS, snaps):
            step = plan.trellis[k]
            if step.globals is None:
                continue
            for g in step.globals:
                parts.append(
                    f'<circle cx="{sx(g[0])}" cy="{sy(g[1])}" r="1.5" fill="{color}" '
                    f'fill-opacity="0.5" stroke="none"/>'
                )
    if plan.globals is not None and len(plan.globals):
        pts = " ".join(f"{sx(g[0])},{sy(g[1])}" for g in plan.globals)
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="#d62728" stroke-width="2"/>'
        )
        g0 = plan.globals[0]
        parts.append(f'<circle cx="{sx(g0[0])}" cy="{sy(g0[1])}" r="4" fill="#d62728"/>')
    parts.append("</svg>")
    return "\n".join(parts)
