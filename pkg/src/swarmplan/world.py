"""States, environments, scenarios, local observations, feasibility and cost.

Conventions used throughout the package:

* positions/velocities are 2-vectors in meters / meters per second,
* a joint state of ``n`` robots flattens to ``[p1, v1, ..., pn, vn, t]``
  (dimension ``4n + 1``),
* static obstacles are axis-aligned boxes ``[xmin, ymin, xmax, ymax]``;
  generated maps only ever contain unit cells on the 1 m grid, hand-built
  maps (e.g. the swap corridor) may contain arbitrary boxes,
* all public types are treated as immutable after construction.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

WORKSPACE_SIZE = 8.0  # generated maps are 8m x 8m
GRID_CELLS = 8  # unit cells per side

# extra clearance used when rejection-sampling starts/goals; keeps expert
# grid planning from starting inside the inflated obstacle band
SPAWN_MARGIN = 0.1


class ScenarioError(ValueError):
    """Scenario could not be generated or parsed."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RobotState:
    """Single robot state (position, velocity, time)."""

    p: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(2))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(2))
        object.__setattr__(self, "t", float(self.t))
        if not (np.isfinite(self.p).all() and np.isfinite(self.v).all() and np.isfinite(self.t)):
            raise ValueError("non-finite robot state")
        if self.t < 0:
            raise ValueError("negative time")


@dataclass(frozen=True)
class JointState:
    """Stacked team state; every robot carries the same time stamp."""

    robots: tuple[RobotState, ...]

    def __post_init__(self):
        robots = tuple(self.robots)
        if not robots:
            raise ValueError("empty joint state")
        t0 = robots[0].t
        for r in robots:
            if abs(r.t - t0) > 1e-12:
                raise ValueError("robots disagree on time")
        object.__setattr__(self, "robots", robots)

    @property
    def n_robots(self) -> int:
        return len(self.robots)

    @property
    def t(self) -> float:
        return self.robots[0].t

    @property
    def dim(self) -> int:
        return 4 * len(self.robots) + 1

    def positions(self) -> np.ndarray:
        return np.array([r.p for r in self.robots])

    def velocities(self) -> np.ndarray:
        return np.array([r.v for r in self.robots])

    def to_vector(self) -> np.ndarray:
        out = np.empty(self.dim)
        for i, r in enumerate(self.robots):
            out[4 * i : 4 * i + 2] = r.p
            out[4 * i + 2 : 4 * i + 4] = r.v
        out[-1] = self.t
        return out

    @staticmethod
    def from_vector(vec: np.ndarray) -> "JointState":
        vec = np.asarray(vec, dtype=float)
        if vec.ndim != 1 or (vec.size - 1) % 4 != 0:
            raise ValueError(f"bad joint vector length {vec.size}")
        n = (vec.size - 1) // 4
        t = float(vec[-1])
        robots = tuple(
            RobotState(vec[4 * i : 4 * i + 2], vec[4 * i + 2 : 4 * i + 4], t) for i in range(n)
        )
        return JointState(robots)


@dataclass(frozen=True)
class Control:
    """Per-robot accelerations, shape (n_robots, 2)."""

    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1, 2))

    @property
    def n_robots(self) -> int:
        return self.a.shape[0]

    def is_admissible(self, u_max: float, tol: float = 1e-9) -> bool:
        return bool((np.linalg.norm(self.a, axis=1) <= u_max + tol).all())


@dataclass(frozen=True)
class DynamicDisc:
    """Time-parameterized moving disc, held at its endpoints outside [ts[0], ts[-1]].

    Used to inject previously planned robots into the environment for
    sequential planning; ``vs`` stores the velocity at each sample so the
    disc can appear as a moving neighbor in observations.
    """

    ts: np.ndarray
    ps: np.ndarray
    vs: np.ndarray
    radius: float

    def __post_init__(self):
        ts = np.asarray(self.ts, dtype=float)
        ps = np.asarray(self.ps, dtype=float)
        vs = np.asarray(self.vs, dtype=float)
        if ts.ndim != 1 or ps.shape != (ts.size, 2) or vs.shape != ps.shape:
            raise ValueError("inconsistent dynamic obstacle arrays")
        if ts.size < 1 or (np.diff(ts) <= 0).any():
            raise ValueError("dynamic obstacle times must be strictly increasing")
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "ps", ps)
        object.__setattr__(self, "vs", vs)
        object.__setattr__(self, "radius", float(self.radius))

    def sample(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Position and velocity at time t (linear interpolation, clamped ends)."""
        ts = self.ts
        if t <= ts[0]:
            return self.ps[0], np.zeros(2)
        if t >= ts[-1]:
            return self.ps[-1], np.zeros(2)
        k = int(np.searchsorted(ts, t, side="right")) - 1
        a = (t - ts[k]) / (ts[k + 1] - ts[k])
        return (1 - a) * self.ps[k] + a * self.ps[k + 1], (1 - a) * self.vs[k] + a * self.vs[k + 1]

    def positions_at(self, times: np.ndarray) -> np.ndarray:
        """Vectorized position lookup, shape (len(times), 2)."""
        times = np.asarray(times, dtype=float)
        px = np.interp(times, self.ts, self.ps[:, 0])
        py = np.interp(times, self.ts, self.ps[:, 1])
        return np.stack([px, py], axis=-1)


@dataclass(frozen=True)
class Environment:
    """Workspace bounds plus static boxes and optional moving discs."""

    bounds: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, WORKSPACE_SIZE, WORKSPACE_SIZE])
    )
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    dynamic_obstacles: tuple[DynamicDisc, ...] = ()

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float).reshape(4)
        obs = np.asarray(self.obstacles, dtype=float).reshape(-1, 4)
        if b[2] <= b[0] or b[3] <= b[1]:
            raise ValueError("degenerate bounds")
        if obs.size and ((obs[:, 2:] <= obs[:, :2]).any()):
            raise ValueError("degenerate obstacle box")
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "obstacles", obs)
        object.__setattr__(self, "dynamic_obstacles", tuple(self.dynamic_obstacles))

    @property
    def n_obstacles(self) -> int:
        return self.obstacles.shape[0]

    def obstacle_centers(self) -> np.ndarray:
        if not self.n_obstacles:
            return np.zeros((0, 2))
        return 0.5 * (self.obstacles[:, :2] + self.obstacles[:, 2:])

    def with_dynamic(self, discs: Iterable[DynamicDisc]) -> "Environment":
        return replace(self, dynamic_obstacles=self.dynamic_obstacles + tuple(discs))


@dataclass(frozen=True)
class ProblemParams:
    """Physical limits and planner-facing problem constants."""

    v_max: float = 0.5
    u_max: float = 0.5
    r_robot: float = 0.125
    r_goal: float = 0.2
    r_sense: float = 3.0
    goal_time: float = 60.0
    dt_min: float = 0.1
    dt_max: float = 0.75

    def __post_init__(self):
        for name in ("v_max", "u_max", "r_robot", "r_goal", "r_sense", "goal_time", "dt_min", "dt_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dt_min > self.dt_max:
            raise ValueError("dt_min > dt_max")


@dataclass(frozen=True)
class Scenario:
    """A planning problem: environment, rest-to-rest starts and goals."""

    environment: Environment
    starts: tuple[RobotState, ...]
    goals: np.ndarray  # (n, 2) goal positions; goal velocity is zero
    params: ProblemParams
    seed: int = 0

    def __post_init__(self):
        starts = tuple(self.starts)
        goals = np.asarray(self.goals, dtype=float).reshape(-1, 2)
        if len(starts) != goals.shape[0] or not starts:
            raise ValueError("starts/goals mismatch")
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "goals", goals)

    @property
    def n_robots(self) -> int:
        return len(self.starts)

    def start_state(self) -> JointState:
        return JointState(self.starts)

    def goal_states(self) -> list[RobotState]:
        return [RobotState(g, np.zeros(2), 0.0) for g in self.goals]


@dataclass(frozen=True)
class Observation:
    """Local view of one robot: relative target plus neighbor sets.

    ``rel_goal`` is ``(target.p - p, target.v - v)``; neighbor rows are
    relative states ``(dp, dv)`` for robots and relative centers ``(dp,)``
    for obstacles, all within the sensing radius.
    """

    rel_goal: np.ndarray
    neighbor_robots: np.ndarray  # (k, 4)
    neighbor_obstacles: np.ndarray  # (m, 2)

    def __post_init__(self):
        object.__setattr__(self, "rel_goal", np.asarray(self.rel_goal, dtype=float).reshape(4))
        object.__setattr__(
            self, "neighbor_robots", np.asarray(self.neighbor_robots, dtype=float).reshape(-1, 4)
        )
        object.__setattr__(
            self,
            "neighbor_obstacles",
            np.asarray(self.neighbor_obstacles, dtype=float).reshape(-1, 2),
        )


# ---------------------------------------------------------------------------
# Vectorized feasibility kernels (shared by is_feasible and the planner)
# ---------------------------------------------------------------------------


def split_flat(states: np.ndarray, n_robots: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split flat joint vectors (..., 4n+1) into P (..., n, 2), V (..., n, 2), t (...)."""
    states = np.asarray(states, dtype=float)
    body = states[..., :-1].reshape(states.shape[:-1] + (n_robots, 4))
    return body[..., 0:2], body[..., 2:4], states[..., -1]


def flat_from_parts(P: np.ndarray, V: np.ndarray, t) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    n = P.shape[-2]
    out = np.empty(P.shape[:-2] + (4 * n + 1,))
    body = out[..., :-1].reshape(P.shape[:-2] + (n, 4))
    body[..., 0:2] = P
    body[..., 2:4] = V
    out[..., -1] = t
    return out


def feasible_mask(
    P: np.ndarray, V: np.ndarray, t: np.ndarray, env: Environment, params: ProblemParams
) -> np.ndarray:
    """Feasibility of a batch of joint states.

    P, V: (m, n, 2); t: (m,). Returns a boolean (m,) mask. A state is
    feasible when every robot respects the velocity bound, robots keep
    >= 2*r_robot separation, and every robot disc is disjoint from all
    static boxes and from every dynamic disc evaluated at its time.
    """
    P = np.asarray(P, dtype=float)
    V = np.asarray(V, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    m, n, _ = P.shape
    ok = np.ones(m, dtype=bool)

    v2 = np.einsum("mij,mij->mi", V, V)
    ok &= (v2 <= params.v_max**2 + 1e-12).all(axis=1)

    if n > 1:
        iu, ju = np.triu_indices(n, 1)
        diff = P[:, iu, :] - P[:, ju, :]
        d2 = np.einsum("mkj,mkj->mk", diff, diff)
        ok &= (d2 >= (2 * params.r_robot) ** 2 - 1e-12).all(axis=1)

    boxes = env.obstacles
    if boxes.shape[0]:
        c = np.clip(P[:, :, None, :], boxes[None, None, :, 0:2], boxes[None, None, :, 2:4])
        db2 = ((P[:, :, None, :] - c) ** 2).sum(axis=-1)
        ok &= (db2 >= params.r_robot**2 - 1e-12).all(axis=(1, 2))

    for disc in env.dynamic_obstacles:
        centers = disc.positions_at(t)  # (m, 2)
        dd2 = ((P - centers[:, None, :]) ** 2).sum(axis=-1)
        ok &= (dd2 >= (params.r_robot + disc.radius) ** 2 - 1e-12).all(axis=1)

    return ok


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def observe(
    joint: JointState,
    targets: Sequence[RobotState],
    env: Environment,
    params: ProblemParams,
    i: int,
) -> Observation:
    """Local observation of robot i relative to its target state.

    Neighbor sets hold exactly the other robots / obstacle centers within
    r_sense of robot i. Moving discs in the environment count as neighbor
    robots (position and velocity interpolated at the state's time).
    """
    if not 0 <= i < joint.n_robots:
        raise IndexError(f"robot index {i} out of range")
    if len(targets) != joint.n_robots:
        raise ValueError("target list not aligned with robots")
    me = joint.robots[i]
    tgt = targets[i]
    rel_goal = np.concatenate([tgt.p - me.p, tgt.v - me.v])

    rows = []
    for j, other in enumerate(joint.robots):
        if j == i:
            continue
        dp = other.p - me.p
        if dp @ dp <= params.r_sense**2:
            rows.append(np.concatenate([dp, other.v - me.v]))
    for disc in env.dynamic_obstacles:
        dpos, dvel = disc.sample(joint.t)
        dp = dpos - me.p
        if dp @ dp <= params.r_sense**2:
            rows.append(np.concatenate([dp, dvel - me.v]))
    neighbor_robots = np.array(rows) if rows else np.zeros((0, 4))

    centers = env.obstacle_centers()
    if centers.shape[0]:
        dp = centers - me.p
        mask = np.einsum("ij,ij->i", dp, dp) <= params.r_sense**2
        neighbor_obstacles = dp[mask]
    else:
        neighbor_obstacles = np.zeros((0, 2))

    return Observation(rel_goal, neighbor_robots, neighbor_obstacles)


def is_feasible(joint: JointState, env: Environment, params: ProblemParams) -> bool:
    """Velocity bound, pairwise separation and obstacle clearance (Boolean)."""
    P = joint.positions()[None]
    V = joint.velocities()[None]
    return bool(feasible_mask(P, V, np.array([joint.t]), env, params)[0])


def goal_residual(joint: JointState, scenario: Scenario) -> float:
    """Sum over robots of squared position+velocity distance to the goal."""
    P = joint.positions()
    V = joint.velocities()
    return float(((P - scenario.goals) ** 2).sum() + (V**2).sum())


def in_goal(joint: JointState, scenario: Scenario) -> bool:
    return goal_residual(joint, scenario) <= scenario.params.r_goal


def path_cost(controls: Sequence[tuple[Control, float]]) -> float:
    """Summed squared control norms integrated over their durations."""
    total = 0.0
    for control, dt in controls:
        if dt <= 0:
            raise ValueError("non-positive duration")
        total += float((control.a**2).sum() * dt)
    return total


def min_obstacle_clearance(p: np.ndarray, boxes: np.ndarray) -> float:
    """Distance from a point to the nearest box (inf when no boxes)."""
    if not boxes.shape[0]:
        return np.inf
    c = np.clip(p[None, :], boxes[:, 0:2], boxes[:, 2:4])
    return float(np.sqrt(((p[None, :] - c) ** 2).sum(axis=1)).min())


def generate_scenario(
    n_robots: int,
    obstacle_fraction: float,
    seed: int,
    params: ProblemParams | None = None,
    max_attempts: int = 5000,
) -> Scenario:
    """Random 8m x 8m grid map with rejection-sampled starts and goals.

    Obstacle cells are drawn without replacement from the 8x8 unit grid
    (count = floor(fraction * 64)). Starts and goals keep SPAWN_MARGIN of
    extra clearance so they sit strictly inside free space. Deterministic
    in the seed.
    """
    if n_robots < 1:
        raise ValueError("need at least one robot")
    if not 0.0 <= obstacle_fraction <= 0.5:
        raise ValueError("obstacle_fraction outside [0, 0.5]")
    if params is None:
        params = ProblemParams(r_goal=0.2 * n_robots)

    rng = np.random.default_rng(seed)
    n_cells = int(obstacle_fraction * GRID_CELLS * GRID_CELLS)
    cell_ids = np.sort(rng.choice(GRID_CELLS * GRID_CELLS, size=n_cells, replace=False))
    boxes = np.array(
        [[c % GRID_CELLS, c // GRID_CELLS, c % GRID_CELLS + 1, c // GRID_CELLS + 1] for c in cell_ids],
        dtype=float,
    ).reshape(-1, 4)
    env = Environment(obstacles=boxes)

    lo = params.r_robot + SPAWN_MARGIN
    hi = WORKSPACE_SIZE - lo
    min_sep = 2 * params.r_robot + SPAWN_MARGIN

    def sample_points(avoid: np.ndarray | None = None) -> np.ndarray:
        pts: list[np.ndarray] = []
        for _ in range(n_robots):
            for _attempt in range(max_attempts):
                p = rng.uniform(lo, hi, 2)
                if min_obstacle_clearance(p, boxes) < params.r_robot + SPAWN_MARGIN:
                    continue
                if pts and (np.linalg.norm(np.array(pts) - p, axis=1) < min_sep).any():
                    continue
                if avoid is not None and (np.linalg.norm(avoid - p, axis=1) < min_sep).any():
                    continue
                pts.append(p)
                break
            else:
                raise ScenarioError(
                    f"could not place {n_robots} robots after {max_attempts} attempts "
                    f"(fraction={obstacle_fraction}, seed={seed})"
                )
        return np.array(pts)

    start_pts = sample_points()
    # goals also keep clear of every start so a robot parked at its goal can
    # never pin another robot inside its own start position
    goal_pts = sample_points(avoid=start_pts)
    starts = tuple(RobotState(p, np.zeros(2), 0.0) for p in start_pts)
    return Scenario(env, starts, goal_pts, params, seed=seed)


# ---------------------------------------------------------------------------
# Scenario file format: one record per line, `keyword values...`
# ---------------------------------------------------------------------------

_FORMAT_TAG = "swarmplan-scenario 1"
_PARAM_FIELDS = ("v_max", "u_max", "r_robot", "r_goal", "r_sense", "goal_time", "dt_min", "dt_max")


def _is_unit_cell(box: np.ndarray) -> bool:
    return (
        float(box[0]).is_integer()
        and float(box[1]).is_integer()
        and box[2] == box[0] + 1
        and box[3] == box[1] + 1
    )


def serialize_scenario(sc: Scenario) -> str:
    out = io.StringIO()
    out.write(_FORMAT_TAG + "\n")
    out.write(f"seed {sc.seed}\n")
    out.write("bounds " + " ".join(repr(float(x)) for x in sc.environment.bounds) + "\n")
    for name in _PARAM_FIELDS:
        out.write(f"param {name} {repr(float(getattr(sc.params, name)))}\n")
    for box in sc.environment.obstacles:
        if _is_unit_cell(box):
            out.write(f"cell {int(box[0])} {int(box[1])}\n")
        else:
            out.write("box " + " ".join(repr(float(x)) for x in box) + "\n")
    for r in sc.starts:
        out.write(
            "start " + " ".join(repr(float(x)) for x in (r.p[0], r.p[1], r.v[0], r.v[1])) + "\n"
        )
    for g in sc.goals:
        out.write("goal " + " ".join(repr(float(x)) for x in g) + "\n")
    return out.getvalue()


def parse_scenario(text: str) -> Scenario:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != _FORMAT_TAG:
        raise ScenarioError("not a scenario file (bad or missing format tag)")
    seed = 0
    bounds = None
    pvals: dict[str, float] = {}
    boxes: list[list[float]] = []
    starts: list[RobotState] = []
    goals: list[list[float]] = []
    for ln in lines[1:]:
        parts = ln.split()
        kw, args = parts[0], parts[1:]
        try:
            if kw == "seed":
                seed = int(args[0])
            elif kw == "bounds":
                bounds = [float(x) for x in args]
            elif kw == "param":
                pvals[args[0]] = float(args[1])
            elif kw == "cell":
                x, y = int(args[0]), int(args[1])
                boxes.append([x, y, x + 1, y + 1])
            elif kw == "box":
                boxes.append([float(x) for x in args])
            elif kw == "start":
                vals = [float(x) for x in args]
                starts.append(RobotState(vals[0:2], vals[2:4], 0.0))
            elif kw == "goal":
                goals.append([float(x) for x in args])
            else:
                raise ScenarioError(f"unknown record {kw!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"malformed record: {ln!r}") from exc
    if bounds is None:
        raise ScenarioError("missing bounds record")
    missing = [n for n in _PARAM_FIELDS if n not in pvals]
    if missing:
        raise ScenarioError(f"missing params: {missing}")
    env = Environment(bounds=np.array(bounds), obstacles=np.array(boxes).reshape(-1, 4))
    return Scenario(env, tuple(starts), np.array(goals).reshape(-1, 2), ProblemParams(**pvals), seed)


def save_scenario(sc: Scenario, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_scenario(sc))


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return parse_scenario(fh.read())


def scenario_hash(sc: Scenario) -> str:
    """Stable 12-hex digest of the canonical serialization."""
    return hashlib.sha256(serialize_scenario(sc).encode()).hexdigest()[:12]
