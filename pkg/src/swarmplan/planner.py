"""Kinodynamic RRT over the joint state space with gated heuristics.

Per iteration: sample a (goal-biased) random state, pick the node to expand
(plain nearest with probability 1-beta_d, otherwise the learned-distance
argmin over the K cheap-metric candidates), steer (baseline sampling with
probability 1-beta_s, otherwise the learned per-robot policy), draw a
duration uniformly and micro-check the expansion. The random stream is
consumed in a fixed order (sample, distance gate, steer gate, steer
samples, duration) so runs are reproducible bit-for-bit.

Nodes whose time is within dt_min of the horizon can never be expanded and
are therefore left out of the nearest-neighbor index.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import Edge, InfeasibleEdge, edge_feasible_flat, propagate_checked
from .heuristics import (
    DistanceFn,
    SteerFn,
    approx_steer_flat,
    baseline_distance_flat,
    learned_distance_flat,
    learned_steer_flat,
)
from .nnindex import NodeIndex
from .world import (
    Control,
    DynamicDisc,
    Environment,
    JointState,
    ProblemParams,
    Scenario,
    feasible_mask,
    split_flat,
)


class StartInfeasible(ValueError):
    """The scenario start state violates feasibility."""


@dataclass(frozen=True)
class PlannerConfig:
    beta_d: float = 1.0
    beta_s: float = 0.5
    k_nearest: int = 10
    goal_bias: float = 0.3
    dt_min: float | None = None  # None: use the scenario's params
    dt_max: float | None = None
    node_budget: int = 100_000
    wallclock_budget: float | None = None
    max_iterations: int | None = None  # None: 50 * node_budget safety valve
    seed: int = 0

    def __post_init__(self):
        for nm in ("beta_d", "beta_s", "goal_bias"):
            if not 0.0 <= getattr(self, nm) <= 1.0:
                raise ValueError(f"{nm} outside [0, 1]")
        if self.k_nearest < 1:
            raise ValueError("k_nearest must be >= 1")
        if self.node_budget < 1:
            raise ValueError("node_budget must be >= 1")


class SearchTree:
    """Append-only node store plus nearest index over expandable nodes."""

    def __init__(self, root_flat: np.ndarray, n_robots: int, w_v: float, lambda_t: float,
                 horizon_t: float, dt_min: float):
        self.n_robots = n_robots
        self.dim = root_flat.size
        self._cap = 1024
        self.states = np.empty((self._cap, self.dim))
        self.parents = np.empty(self._cap, dtype=np.int64)
        self.controls = np.empty((self._cap, n_robots, 2))
        self.dts = np.empty(self._cap)
        self.size = 0
        self._expand_limit = horizon_t - dt_min
        self.index = NodeIndex(n_robots, w_v=w_v, lambda_t=lambda_t)
        self.add(root_flat, -1, np.zeros((n_robots, 2)), 0.0)

    def add(self, state_flat: np.ndarray, parent: int, a: np.ndarray, dt: float) -> int:
        if self.size == self._cap:
            self._cap *= 2
            for name in ("states", "parents", "controls", "dts"):
                old = getattr(self, name)
                new = np.empty((self._cap,) + old.shape[1:], dtype=old.dtype)
                new[: self.size] = old[: self.size]
                setattr(self, name, new)
        i = self.size
        self.states[i] = state_flat
        self.parents[i] = parent
        self.controls[i] = a
        self.dts[i] = dt
        self.size += 1
        if state_flat[-1] <= self._expand_limit + 1e-12:
            self.index.insert(state_flat, i)
        return i

    def node_state(self, i: int) -> JointState:
        return JointState.from_vector(self.states[i])

    def __len__(self) -> int:
        return self.size


@dataclass
class PlanResult:
    status: str  # "solved" | "budget-exhausted"
    trajectory: tuple[Edge, ...] | None
    nodes_total: int
    iterations: int
    path_cost: float | None
    wall_ms: float
    tree: SearchTree | None = None
    goal_node: int | None = None
    robot_trajectories: tuple[tuple[Edge, ...], ...] | None = None
    failed_robot: int | None = None

    @property
    def solved(self) -> bool:
        return self.status == "solved"


# ---------------------------------------------------------------------------
# Sampling and node selection
# ---------------------------------------------------------------------------


def _sample_state_flat(scenario: Scenario, cfg: PlannerConfig, rng: np.random.Generator) -> np.ndarray:
    """Goal configuration with probability goal_bias, else uniform state."""
    params = scenario.params
    n = scenario.n_robots
    b = scenario.environment.bounds
    out = np.empty(4 * n + 1)
    body = out[:-1].reshape(n, 4)
    if rng.random() < cfg.goal_bias:
        body[:, 0:2] = scenario.goals
        body[:, 2:4] = 0.0
    else:
        body[:, 0:2] = rng.uniform(b[[0, 1]], b[[2, 3]], (n, 2))
        r = params.v_max * np.sqrt(rng.random(n))
        th = rng.random(n) * 2 * np.pi
        body[:, 2] = r * np.cos(th)
        body[:, 3] = r * np.sin(th)
    out[-1] = rng.uniform(0.0, params.goal_time)
    return out


def sample_state(scenario: Scenario, cfg: PlannerConfig, rng: np.random.Generator) -> JointState:
    return JointState.from_vector(_sample_state_flat(scenario, cfg, rng))


def _nearest_index(
    tree: SearchTree,
    x_rand: np.ndarray,
    cfg: PlannerConfig,
    d: DistanceFn,
    env: Environment,
    params: ProblemParams,
    r_gate: float,
) -> int:
    if r_gate < cfg.beta_d:
        ids, _ = tree.index.query_knn(x_rand, cfg.k_nearest)
        cand = tree.states[ids]
        if d.kind == "learned":
            cost = learned_distance_flat(d, cand, x_rand, tree.n_robots, env, params)
        else:
            cost = baseline_distance_flat(cand, x_rand, tree.n_robots, d.w_v, d.lambda_t)
        return int(ids[int(np.lexsort((ids, cost))[0])])
    idx, _ = tree.index.query_nearest(x_rand)
    return idx


def nearest(
    tree: SearchTree,
    x_rand: JointState,
    cfg: PlannerConfig,
    d: DistanceFn,
    rng: np.random.Generator,
    env: Environment | None = None,
    params: ProblemParams | None = None,
) -> int:
    """Gated node selection; env/params are only needed for learned distances."""
    if len(tree) == 0:
        raise ValueError("empty tree")
    return _nearest_index(tree, x_rand.to_vector(), cfg, d, env or Environment(), params or ProblemParams(), rng.random())


# ---------------------------------------------------------------------------
# Joint planning
# ---------------------------------------------------------------------------


def plan_joint(scenario: Scenario, cfg: PlannerConfig, d: DistanceFn, s: SteerFn) -> PlanResult:
    t_start = time.perf_counter()
    params = scenario.params
    dt_min = params.dt_min if cfg.dt_min is None else cfg.dt_min
    dt_max = params.dt_max if cfg.dt_max is None else cfg.dt_max
    env = scenario.environment
    n = scenario.n_robots
    rng = np.random.default_rng(cfg.seed)

    root = scenario.start_state().to_vector()
    P, V, T = split_flat(root[None], n)
    if not feasible_mask(P, V, T, env, params)[0]:
        raise StartInfeasible("scenario start state is infeasible")

    tree = SearchTree(root, n, d.w_v, d.lambda_t, params.goal_time, dt_min)
    goals = scenario.goals

    def residual(state: np.ndarray) -> float:
        body = state[:-1].reshape(n, 4)
        return float(((body[:, 0:2] - goals) ** 2).sum() + (body[:, 2:4] ** 2).sum())

    goal_node = 0 if residual(root) <= params.r_goal else None
    iterations = 0
    max_iter = cfg.max_iterations if cfg.max_iterations is not None else 50 * cfg.node_budget
    status = "solved" if goal_node is not None else "budget-exhausted"

    while goal_node is None:
        if tree.size >= cfg.node_budget or iterations >= max_iter or len(tree.index) == 0:
            break
        if (
            cfg.wallclock_budget is not None
            and iterations % 256 == 0
            and time.perf_counter() - t_start > cfg.wallclock_budget
        ):
            break
        iterations += 1

        x_rand = _sample_state_flat(scenario, cfg, rng)
        r_d = rng.random()
        r_s = rng.random()
        near_i = _nearest_index(tree, x_rand, cfg, d, env, params, r_d)
        x_near = tree.states[near_i]

        if r_s < cfg.beta_s and s.kind == "learned":
            a = learned_steer_flat(s.model, x_near, x_rand, n, env, params)
        else:
            a = approx_steer_flat(x_near, x_rand, n, s.n_samples, params, rng, w_v=d.w_v)
        dt = rng.uniform(dt_min, dt_max)

        end = edge_feasible_flat(x_near, a, dt, n, env, params)
        if end is None:
            continue
        node = tree.add(end, near_i, a, dt)
        if residual(end) <= params.r_goal:
            goal_node = node
            status = "solved"
            break

    wall_ms = (time.perf_counter() - t_start) * 1e3
    if status == "solved":
        edges, cost = extract_trajectory(tree, goal_node, env, params)
        return PlanResult("solved", edges, tree.size, iterations, cost, wall_ms, tree, goal_node)
    return PlanResult("budget-exhausted", None, tree.size, iterations, None, wall_ms, tree, None)


def extract_trajectory(
    tree: SearchTree, goal_node: int, env: Environment, params: ProblemParams
) -> tuple[tuple[Edge, ...], float]:
    """Walk parent links to the root, re-validating every edge on the way."""
    if not 0 <= goal_node < tree.size:
        raise ValueError("goal node not in tree")
    chain = []
    i = goal_node
    hops = 0
    while tree.parents[i] >= 0:
        chain.append(i)
        i = int(tree.parents[i])
        hops += 1
        if hops > tree.size:
            raise RuntimeError("broken parent chain")
    chain.reverse()
    edges = []
    cost = 0.0
    for node in chain:
        parent = int(tree.parents[node])
        x_from = tree.node_state(parent)
        control = Control(tree.controls[node])
        dt = float(tree.dts[node])
        edge = propagate_checked(x_from, control, dt, env, params)  # defense in depth
        if not np.allclose(edge.to_state.to_vector(), tree.states[node], atol=1e-9):
            raise RuntimeError(f"revalidated endpoint drifted at node {node}")
        edges.append(edge)
        cost += float((control.a**2).sum() * dt)
    return tuple(edges), cost


# ---------------------------------------------------------------------------
# Sequential planning
# ---------------------------------------------------------------------------

SEQUENTIAL_GOAL_RADIUS = 0.2


def trajectory_to_disc(start: JointState, edges: tuple[Edge, ...], radius: float) -> DynamicDisc:
    """Moving disc tracing a single-robot trajectory (held at both ends)."""
    ts = [start.t]
    ps = [start.robots[0].p]
    vs = [start.robots[0].v]
    for edge in edges:
        for ms in edge.micro_states:
            ts.append(ms.t)
            ps.append(ms.robots[0].p)
            vs.append(ms.robots[0].v)
    if len(ts) == 1:
        ts.append(ts[0] + 1.0)
        ps.append(ps[0])
        vs.append(np.zeros(2))
    return DynamicDisc(np.array(ts), np.array(ps), np.array(vs), radius)


def plan_sequential(
    scenario: Scenario,
    cfg: PlannerConfig,
    d: DistanceFn,
    s: SteerFn,
    priority: list[int] | None = None,
) -> PlanResult:
    """Plan one robot at a time, earlier robots becoming moving obstacles.

    Each sub-plan uses a fixed per-robot goal radius of 0.2 and cfg's node
    budget. Completed robots stay parked at their goals; a failed sub-plan
    fails the whole problem with the failing robot recorded.
    """
    t_start = time.perf_counter()
    order = list(range(scenario.n_robots)) if priority is None else list(priority)
    if sorted(order) != list(range(scenario.n_robots)):
        raise ValueError("priority must be a permutation of robot indices")
    params = replace(scenario.params, r_goal=SEQUENTIAL_GOAL_RADIUS)
    env = scenario.environment
    per_robot: dict[int, tuple[Edge, ...]] = {}
    nodes_total = 0
    iterations = 0
    cost_total = 0.0
    for k, robot in enumerate(order):
        sub_seed = int(np.random.SeedSequence([cfg.seed, robot]).generate_state(1)[0])
        sub_cfg = replace(cfg, seed=sub_seed)
        sub_scenario = Scenario(
            env, (scenario.starts[robot],), scenario.goals[[robot]], params, seed=scenario.seed
        )
        res = plan_joint(sub_scenario, sub_cfg, d, s)
        nodes_total += res.nodes_total
        iterations += res.iterations
        if not res.solved:
            wall_ms = (time.perf_counter() - t_start) * 1e3
            return PlanResult(
                "budget-exhausted", None, nodes_total, iterations, None, wall_ms,
                failed_robot=robot,
            )
        per_robot[robot] = res.trajectory
        cost_total += res.path_cost
        env = env.with_dynamic(
            [trajectory_to_disc(sub_scenario.start_state(), res.trajectory, params.r_robot)]
        )
    wall_ms = (time.perf_counter() - t_start) * 1e3
    return PlanResult(
        "solved", None, nodes_total, iterations, cost_total, wall_ms,
        robot_trajectories=tuple(per_robot[i] for i in range(scenario.n_robots)),
    )


# ---------------------------------------------------------------------------
# Trajectory files
# ---------------------------------------------------------------------------

_PLAN_TAG = "swarmplan-plan 1"


@dataclass(frozen=True)
class PlanFile:
    """Parsed trajectory file: header metadata plus per-edge rows."""

    scenario_hash: str
    status: str
    metrics: dict
    config: dict
    # per robot-group: list of (t, states (n,4), controls (n,2), dt)
    sections: tuple[tuple[tuple[float, np.ndarray, np.ndarray, float], ...], ...]


def _edge_row(t: float, states: np.ndarray, controls: np.ndarray, dt: float) -> str:
    vals = [t] + list(states.ravel()) + list(controls.ravel()) + [dt]
    return "edge " + " ".join(repr(float(v)) for v in vals)


def save_plan(result: PlanResult, scenario_hash: str, cfg: PlannerConfig, path) -> None:
    """Write header (hash, config, status, metrics) and per-edge state/control rows."""
    lines = [_PLAN_TAG, f"scenario {scenario_hash}", f"status {result.status}"]
    lines.append(f"metric nodes {result.nodes_total}")
    lines.append(f"metric iterations {result.iterations}")
    if result.path_cost is not None:
        lines.append(f"metric path_cost {result.path_cost!r}")
    lines.append(f"metric wall_ms {result.wall_ms!r}")
    for name in ("beta_d", "beta_s", "k_nearest", "goal_bias", "node_budget", "seed"):
        lines.append(f"cfg {name} {getattr(cfg, name)!r}")
    groups = []
    if result.trajectory is not None:
        groups = [(None, result.trajectory)]
    elif result.robot_trajectories is not None:
        groups = list(enumerate(result.robot_trajectories))
    for key, edges in groups:
        lines.append("section joint" if key is None else f"section robot {key}")
        for e in edges:
            n = e.from_state.n_robots
            states = np.concatenate([e.from_state.positions(), e.from_state.velocities()], axis=1)
            lines.append(_edge_row(e.from_state.t, states.reshape(n, 4), e.control.a, e.dt))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_plan(path) -> PlanFile:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != _PLAN_TAG:
        raise ValueError("not a swarmplan plan file")
    scenario_hash, status = "", ""
    metrics: dict = {}
    config: dict = {}
    sections: list[list] = []
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "scenario":
            scenario_hash = parts[1]
        elif parts[0] == "status":
            status = parts[1]
        elif parts[0] == "metric":
            metrics[parts[1]] = float(parts[2])
        elif parts[0] == "cfg":
            config[parts[1]] = parts[2]
        elif parts[0] == "section":
            sections.append([])
        elif parts[0] == "edge":
            vals = [float(x) for x in parts[1:]]
            n = (len(vals) - 2) // 6
            t = vals[0]
            states = np.array(vals[1 : 1 + 4 * n]).reshape(n, 4)
            controls = np.array(vals[1 + 4 * n : 1 + 6 * n]).reshape(n, 2)
            if not sections:
                sections.append([])
            sections[-1].append((t, states, controls, vals[-1]))
        else:
            raise ValueError(f"unknown plan record {parts[0]!r}")
    return PlanFile(
        scenario_hash, status, metrics, config, tuple(tuple(s) for s in sections)
    )


def validate_robot_trajectories(
    scenario: Scenario, robot_trajectories: tuple[tuple[Edge, ...], ...], step: float = 0.05
) -> bool:
    """Post-hoc mutual feasibility of per-robot trajectories on a time grid."""
    params = scenario.params
    discs = [
        trajectory_to_disc(JointState((scenario.starts[i],)), edges, params.r_robot)
        for i, edges in enumerate(robot_trajectories)
    ]
    t_end = max(d.ts[-1] for d in discs)
    times = np.arange(0.0, t_end + step, step)
    pos = np.stack([d.positions_at(times) for d in discs], axis=1)  # (T, n, 2)
    n = len(discs)
    if n > 1:
        iu, ju = np.triu_indices(n, 1)
        diff = pos[:, iu, :] - pos[:, ju, :]
        d2 = np.einsum("tkj,tkj->tk", diff, diff)
        if (d2 < (2 * params.r_robot) ** 2 - 1e-9).any():
            return False
    boxes = scenario.environment.obstacles
    if boxes.shape[0]:
        c = np.clip(pos[:, :, None, :], boxes[None, None, :, 0:2], boxes[None, None, :, 2:4])
        db2 = ((pos[:, :, None, :] - c) ** 2).sum(axis=-1)
        if (db2 < params.r_robot**2 - 1e-9).any():
            return False
    return True
