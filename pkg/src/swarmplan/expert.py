"""Built-in prioritized expert used to generate imitation data.

Per robot (in a shuffled priority order): grid A* over inflated static
obstacles gives waypoints, which are shortcut by line-of-sight and then
connected with discrete minimum-effort acceleration profiles on a fixed
0.5 s step. Segment step counts inflate until velocity/acceleration bounds
hold. Conflicts with higher-priority robots are resolved by delaying the
departure in 0.5 s increments up to a cap; robots park at their goals when
done. The discrete profiles satisfy the exact propagation update, so the
emitted trajectories are dynamically consistent to machine precision.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass

import numpy as np

from .dynamics import discrete_min_effort_profile
from .world import ProblemParams, Scenario

log = logging.getLogger(__name__)

EXPERT_DT = 0.5  # trajectory sample step (s)
GRID_CELL = 0.125
ASTAR_INFLATION = 0.075  # extra clearance beyond r_robot for grid occupancy
SHORTCUT_CLEARANCE = 0.05  # extra clearance for line-of-sight shortcuts
DELAY_CAP = 120  # max departure delay, in EXPERT_DT steps
PAIR_MARGIN = 0.01  # extra separation between scheduled robots
PRIORITY_RETRIES = 4  # reshuffles tried before giving a scenario up


class ExpertFailure(RuntimeError):
    """The expert could not produce a trajectory for this scenario."""


@dataclass(frozen=True)
class ExpertTrajectory:
    """Time-sampled joint trajectory on the EXPERT_DT grid.

    ``states[i, k]`` is robot i's (px, py, vx, vy) at t = k * EXPERT_DT;
    ``accels[i, k]`` the constant acceleration over step k. All robots share
    the padded length; robots that finish early sit parked at their goals
    with zero acceleration. ``arrivals[i]`` is the step at which robot i
    reached its goal (states constant afterwards).
    """

    states: np.ndarray  # (n, L+1, 4)
    accels: np.ndarray  # (n, L, 2)
    arrivals: np.ndarray  # (n,)
    scenario_seed: int
    priority: tuple[int, ...]

    @property
    def n_robots(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.accels.shape[1]


# ---------------------------------------------------------------------------
# Grid A*
# ---------------------------------------------------------------------------


def _occupancy(
    boxes: np.ndarray, r_robot: float, n_side: int, parked: np.ndarray | None = None
) -> np.ndarray:
    """True where a robot disc centered at the cell center would be too close.

    ``parked`` holds disc centers of other robots that must be routed around
    (goals of already-planned robots, starts of not-yet-planned ones).
    """
    xs = (np.arange(n_side) + 0.5) * GRID_CELL
    cx, cy = np.meshgrid(xs, xs, indexing="ij")
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1)
    blocked = np.zeros(n_side * n_side, dtype=bool)
    if boxes.shape[0]:
        c = np.clip(centers[:, None, :], boxes[None, :, 0:2], boxes[None, :, 2:4])
        d2 = ((centers[:, None, :] - c) ** 2).sum(axis=-1)
        blocked |= (d2 < (r_robot + ASTAR_INFLATION) ** 2).any(axis=1)
    if parked is not None and len(parked):
        d2 = ((centers[:, None, :] - np.asarray(parked)[None, :, :]) ** 2).sum(axis=-1)
        blocked |= (d2 < (2 * r_robot + ASTAR_INFLATION) ** 2).any(axis=1)
    return blocked.reshape(n_side, n_side)


def _cell_of(p: np.ndarray, n_side: int, blocked: np.ndarray | None = None) -> tuple[int, int]:
    """Cell containing p, falling back to the nearest free center within 0.5 m."""
    i = int(np.clip(p[0] / GRID_CELL, 0, n_side - 1))
    j = int(np.clip(p[1] / GRID_CELL, 0, n_side - 1))
    if blocked is None or not blocked[i, j]:
        return i, j
    best, best_d = None, np.inf
    reach = int(np.ceil(0.5 / GRID_CELL))
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            ni, nj = i + di, j + dj
            if not (0 <= ni < n_side and 0 <= nj < n_side) or blocked[ni, nj]:
                continue
            c = np.array([(ni + 0.5) * GRID_CELL, (nj + 0.5) * GRID_CELL])
            d = float(np.linalg.norm(c - p))
            if d < best_d:
                best, best_d = (ni, nj), d
    if best is None or best_d > 0.5:
        raise ExpertFailure(f"no free grid cell near {p}")
    return best


_MOVES = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
          (1, 1, np.sqrt(2)), (1, -1, np.sqrt(2)), (-1, 1, np.sqrt(2)), (-1, -1, np.sqrt(2))]


def grid_astar(blocked: np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> list[tuple[int, int]]:
    """8-connected A* (no corner cutting); raises ExpertFailure when unreachable."""
    n_side = blocked.shape[0]
    if blocked[start] or blocked[goal]:
        raise ExpertFailure("start or goal cell blocked")

    def h(c):
        dx, dy = abs(c[0] - goal[0]), abs(c[1] - goal[1])
        return max(dx, dy) + (np.sqrt(2) - 1) * min(dx, dy)

    open_heap = [(h(start), 0.0, start)]
    g_cost = {start: 0.0}
    came: dict[tuple[int, int], tuple[int, int]] = {}
    closed = set()
    while open_heap:
        _, g, cur = heapq.heappop(open_heap)
        if cur == goal:
            path = [cur]
            while cur in came:
                cur = came[cur]
                path.append(cur)
            return path[::-1]
        if cur in closed:
            continue
        closed.add(cur)
        for dx, dy, w in _MOVES:
            nx, ny = cur[0] + dx, cur[1] + dy
            if not (0 <= nx < n_side and 0 <= ny < n_side) or blocked[nx, ny]:
                continue
            if dx and dy and (blocked[cur[0] + dx, cur[1]] or blocked[cur[0], cur[1] + dy]):
                continue  # no cutting corners
            ng = g + w
            nxt = (nx, ny)
            if ng < g_cost.get(nxt, np.inf):
                g_cost[nxt] = ng
                came[nxt] = cur
                heapq.heappush(open_heap, (ng + h(nxt), ng, nxt))
    raise ExpertFailure("goal unreachable on grid")


def _segment_clear(
    a: np.ndarray, b: np.ndarray, boxes: np.ndarray, clearance: float,
    parked: np.ndarray | None = None, parked_clearance: float = 0.0,
) -> bool:
    length = float(np.linalg.norm(b - a))
    n = max(2, int(np.ceil(length / 0.05)) + 1)
    pts = a[None, :] + np.linspace(0.0, 1.0, n)[:, None] * (b - a)[None, :]
    if boxes.shape[0]:
        c = np.clip(pts[:, None, :], boxes[None, :, 0:2], boxes[None, :, 2:4])
        d2 = ((pts[:, None, :] - c) ** 2).sum(axis=-1)
        if (d2 < clearance**2).any():
            return False
    if parked is not None and len(parked):
        d2 = ((pts[:, None, :] - parked[None, :, :]) ** 2).sum(axis=-1)
        if (d2 < parked_clearance**2).any():
            return False
    return True


def shortcut_waypoints(
    pts: np.ndarray, boxes: np.ndarray, clearance: float,
    parked: np.ndarray | None = None, parked_clearance: float = 0.0,
) -> np.ndarray:
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not _segment_clear(
            pts[i], pts[j], boxes, clearance, parked, parked_clearance
        ):
            j -= 1
        out.append(pts[j])
        i = j
    return np.array(out)


# ---------------------------------------------------------------------------
# Trajectory fitting
# ---------------------------------------------------------------------------


def _fit_single_robot(
    start_p: np.ndarray, goal_p: np.ndarray, boxes: np.ndarray, params: ProblemParams,
    v_nominal: float, n_side: int, blocked: np.ndarray, parked: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """States (L+1, 4) and accels (L, 2) from start to goal, bounds respected."""
    if np.linalg.norm(goal_p - start_p) < 1e-12:
        states = np.array([[start_p[0], start_p[1], 0.0, 0.0]])
        return states, np.zeros((0, 2))

    cells = grid_astar(blocked, _cell_of(start_p, n_side, blocked),
                       _cell_of(goal_p, n_side, blocked))
    raw = np.array([[(c[0] + 0.5) * GRID_CELL, (c[1] + 0.5) * GRID_CELL] for c in cells])
    raw[0] = start_p
    raw[-1] = goal_p
    clearance = params.r_robot + SHORTCUT_CLEARANCE
    # the endpoints themselves may sit inside another robot's avoidance band
    # (separation minimums allow it), so parked discs get a reduced clearance
    parked_clearance = 2 * params.r_robot + PAIR_MARGIN
    short = shortcut_waypoints(raw, boxes, clearance, parked, parked_clearance)
    for pts in (short, raw):
        traj = _fit_through_waypoints(pts, boxes, params, v_nominal)
        if traj is not None:
            return traj
    raise ExpertFailure("could not fit a collision-free trajectory")


def _fit_through_waypoints(
    pts: np.ndarray, boxes: np.ndarray, params: ProblemParams, v_nominal: float
):
    n_seg = len(pts) - 1
    # heading-blended waypoint velocities, rest at the endpoints
    wp_v = np.zeros((len(pts), 2))
    for k in range(1, n_seg):
        d = pts[k + 1] - pts[k - 1]
        norm = np.linalg.norm(d)
        if norm > 1e-9:
            wp_v[k] = v_nominal * d / norm

    states = [np.array([pts[0][0], pts[0][1], 0.0, 0.0])]
    accels: list[np.ndarray] = []
    for k in range(n_seg):
        p0, v0 = states[-1][0:2], states[-1][2:4]
        p1, v1 = pts[k + 1], wp_v[k + 1]
        dist = float(np.linalg.norm(p1 - p0))
        n_steps = max(2, int(np.ceil(dist / (v_nominal * EXPERT_DT))))
        prof = None
        for _ in range(40):
            cand = discrete_min_effort_profile(p0, v0, p1, v1, n_steps, EXPERT_DT)
            vs = v0[None, :] + EXPERT_DT * np.cumsum(cand, axis=0)
            if (
                np.linalg.norm(cand, axis=1).max() <= 0.98 * params.u_max
                and np.linalg.norm(vs, axis=1).max() <= 0.98 * params.v_max
            ):
                prof = cand
                break
            n_steps = int(np.ceil(n_steps * 1.25)) + 1
        if prof is None:
            return None
        p, v = p0.copy(), v0.copy()
        for a in prof:
            p = p + v * EXPERT_DT + 0.5 * a * EXPERT_DT**2
            v = v + a * EXPERT_DT
            states.append(np.concatenate([p, v]))
            accels.append(a)
    states_arr = np.array(states)
    accels_arr = np.array(accels)
    if not _static_path_clear(states_arr, accels_arr, boxes, params.r_robot):
        return None
    return states_arr, accels_arr


def _sample_dense(states: np.ndarray, accels: np.ndarray, sub: int = 10) -> np.ndarray:
    """Positions every EXPERT_DT/sub seconds (quadratic within each step)."""
    if accels.shape[0] == 0:
        return states[:1, 0:2]
    tau = (np.arange(sub) / sub) * EXPERT_DT
    p = states[:-1, None, 0:2]
    v = states[:-1, None, 2:4]
    a = accels[:, None, :]
    dense = p + v * tau[None, :, None] + 0.5 * a * tau[None, :, None] ** 2
    return np.concatenate([dense.reshape(-1, 2), states[-1:, 0:2]])


def _static_path_clear(states, accels, boxes, r_robot) -> bool:
    if not boxes.shape[0]:
        return True
    pts = _sample_dense(states, accels)
    c = np.clip(pts[:, None, :], boxes[None, :, 0:2], boxes[None, :, 2:4])
    d2 = ((pts[:, None, :] - c) ** 2).sum(axis=-1)
    return bool((d2 >= r_robot**2 - 1e-12).all())


# ---------------------------------------------------------------------------
# Prioritized scheduling
# ---------------------------------------------------------------------------


def _pad_to(states: np.ndarray, accels: np.ndarray, length: int):
    """Extend with parked samples (zero velocity/acceleration) to `length` steps."""
    have = accels.shape[0]
    if have >= length:
        return states, accels
    extra = length - have
    parked = states[-1].copy()
    parked[2:4] = 0.0
    states = np.concatenate([states, np.tile(parked, (extra, 1))])
    accels = np.concatenate([accels, np.zeros((extra, 2))])
    return states, accels


def _delayed(states: np.ndarray, accels: np.ndarray, delay: int):
    if delay == 0:
        return states, accels
    hold = np.tile(states[0], (delay, 1))
    return np.concatenate([hold, states]), np.concatenate([np.zeros((delay, 2)), accels])


def _conflicts(dense_a: np.ndarray, dense_b: np.ndarray, min_sep: float) -> bool:
    n = max(dense_a.shape[0], dense_b.shape[0])

    def pad(d):
        if d.shape[0] >= n:
            return d
        return np.concatenate([d, np.tile(d[-1], (n - d.shape[0], 1))])

    diff = pad(dense_a) - pad(dense_b)
    return bool(((diff**2).sum(axis=1) < min_sep**2).any())


def expert_plan(scenario: Scenario, rng: np.random.Generator, v_nominal: float = 0.3) -> ExpertTrajectory:
    """Prioritized expert trajectory for a whole scenario (or ExpertFailure).

    Scheduling failures retry under a fresh priority shuffle a few times
    before the scenario is given up.
    """
    last: ExpertFailure | None = None
    for _ in range(PRIORITY_RETRIES):
        priority = [int(i) for i in rng.permutation(scenario.n_robots)]
        try:
            return _plan_with_priority(scenario, priority, v_nominal)
        except ExpertFailure as exc:
            last = exc
    raise last


def _plan_with_priority(
    scenario: Scenario, priority: list[int], v_nominal: float
) -> ExpertTrajectory:
    params = scenario.params
    boxes = scenario.environment.obstacles
    n = scenario.n_robots
    n_side = int(round(scenario.environment.bounds[2] / GRID_CELL))

    fitted: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    dense: dict[int, np.ndarray] = {}
    min_sep = 2 * params.r_robot + PAIR_MARGIN
    for rank, robot in enumerate(priority):
        # route around robots parked where this one must pass: goals of
        # already-planned robots and starts of not-yet-planned ones
        parked = np.array(
            [scenario.goals[r] for r in priority[:rank]]
            + [scenario.starts[r].p for r in priority[rank + 1 :]]
        ).reshape(-1, 2)
        blocked = _occupancy(boxes, params.r_robot, n_side, parked)
        states, accels = _fit_single_robot(
            scenario.starts[robot].p, scenario.goals[robot], boxes, params,
            v_nominal, n_side, blocked, parked,
        )
        placed = False
        for delay in range(DELAY_CAP + 1):
            ds, da = _delayed(states, accels, delay)
            cand_dense = _sample_dense(ds, da)
            if all(not _conflicts(cand_dense, dense[o], min_sep) for o in fitted):
                fitted[robot] = (ds, da)
                dense[robot] = cand_dense
                placed = True
                break
        if not placed:
            raise ExpertFailure(f"robot {robot} could not be scheduled within the delay cap")

    length = max(a.shape[0] for _, a in fitted.values())
    all_states = np.zeros((n, length + 1, 4))
    all_accels = np.zeros((n, length, 2))
    arrivals = np.zeros(n, dtype=np.int64)
    for robot, (states, accels) in fitted.items():
        arrivals[robot] = accels.shape[0]
        s, a = _pad_to(states, accels, length)
        all_states[robot] = s
        all_accels[robot] = a
    return ExpertTrajectory(all_states, all_accels, arrivals, scenario.seed, tuple(priority))
