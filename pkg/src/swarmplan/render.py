"""Static SVG rendering of scenarios, trees and solution trajectories."""

from __future__ import annotations

import io

import numpy as np

from .planner import PlanResult
from .world import Scenario

ROBOT_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
                "#e377c2", "#17becf", "#bcbd22", "#7f7f7f", "#aec7e8", "#ff9896",
                "#98df8a", "#c5b0d5", "#ffbb78", "#c49c94")


def render_svg(
    scenario: Scenario,
    result: PlanResult | None = None,
    tree_edge_cap: int = 4000,
    scale: float = 80.0,
) -> str:
    """SVG with obstacles, tree edges, start/goal markers and solution paths."""
    b = scenario.environment.bounds
    w, h = b[2] - b[0], b[3] - b[1]

    def pt(x, y):
        return f"{(x - b[0]) * scale:.1f},{(b[3] - y) * scale:.1f}"

    out = io.StringIO()
    out.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * scale:.0f}" '
        f'height="{h * scale:.0f}" viewBox="0 0 {w * scale:.0f} {h * scale:.0f}">\n'
    )
    out.write(
        f'<rect class="workspace" x="0" y="0" width="{w * scale:.0f}" '
        f'height="{h * scale:.0f}" fill="#fdfdfd" stroke="#333"/>\n'
    )
    for box in scenario.environment.obstacles:
        x, y = (box[0] - b[0]) * scale, (b[3] - box[3]) * scale
        out.write(
            f'<rect class="obstacle" x="{x:.1f}" y="{y:.1f}" '
            f'width="{(box[2] - box[0]) * scale:.1f}" height="{(box[3] - box[1]) * scale:.1f}" '
            f'fill="#555"/>\n'
        )

    tree = result.tree if result is not None else None
    if tree is not None and tree.size > 1:
        stride = max(1, (tree.size - 1) // tree_edge_cap)
        out.write('<g class="tree" stroke="#b0c4de" stroke-width="0.6" fill="none">\n')
        for i in range(1, tree.size, stride):
            parent = int(tree.parents[i])
            n = tree.n_robots
            for r in range(n):
                x0, y0 = tree.states[parent][4 * r], tree.states[parent][4 * r + 1]
                x1, y1 = tree.states[i][4 * r], tree.states[i][4 * r + 1]
                out.write(f'<polyline points="{pt(x0, y0)} {pt(x1, y1)}"/>\n')
        out.write("</g>\n")

    groups: list[tuple[int, tuple]] = []
    if result is not None and result.trajectory:
        for r in range(scenario.n_robots):
            pts = [scenario.starts[r].p] + [
                ms.robots[r].p for e in result.trajectory for ms in e.micro_states
            ]
            groups.append((r, tuple(pts)))
    elif result is not None and result.robot_trajectories:
        for r, edges in enumerate(result.robot_trajectories):
            pts = [scenario.starts[r].p] + [
                ms.robots[0].p for e in edges for ms in e.micro_states
            ]
            groups.append((r, tuple(pts)))
    for r, pts in groups:
        color = ROBOT_COLORS[r % len(ROBOT_COLORS)]
        coords = " ".join(pt(p[0], p[1]) for p in pts)
        out.write(
            f'<polyline class="path" points="{coords}" fill="none" '
            f'stroke="{color}" stroke-width="2"/>\n'
        )

    rr = scenario.params.r_robot * scale
    for r in range(scenario.n_robots):
        color = ROBOT_COLORS[r % len(ROBOT_COLORS)]
        sx, sy = pt(scenario.starts[r].p[0], scenario.starts[r].p[1]).split(",")
        gx, gy = pt(scenario.goals[r][0], scenario.goals[r][1]).split(",")
        out.write(f'<circle class="start" cx="{sx}" cy="{sy}" r="{rr:.1f}" fill="{color}"/>\n')
        out.write(
            f'<circle class="goal" cx="{gx}" cy="{gy}" r="{rr:.1f}" fill="none" '
            f'stroke="{color}" stroke-width="1.5"/>\n'
        )
    out.write("</svg>\n")
    return out.getvalue()


def save_svg(scenario: Scenario, result: PlanResult | None, path, **kw) -> None:
    with open(path, "w") as fh:
        fh.write(render_svg(scenario, result, **kw))
