"""Observation-action and observation-cost datasets for the two heuristics.

The steer dataset transforms expert joint trajectories into decentralized
(observation, action) pairs. The distance dataset rolls the whole team out
under a trained steer model and labels each observation with the remaining
control effort (squared norm integrated over time) until that robot's
arrival. Generation is deterministic: every scenario derives its own rng
stream from (seed, scenario index), so chunked/parallel runs would emit
identical data.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .deepset import DeepSetModel, ObservationBatch
from .expert import EXPERT_DT, ExpertFailure, ExpertTrajectory, expert_plan
from .heuristics import observation_batch
from .world import ProblemParams, Scenario, ScenarioError, generate_scenario

log = logging.getLogger(__name__)

DATASET_FORMAT = "swarmplan-dataset"
DATASET_VERSION = 1

# (robot count, obstacle fraction) cycle used when generating training maps
DEFAULT_KINDS: tuple[tuple[int, float], ...] = (
    (4, 0.10), (4, 0.20), (8, 0.10), (8, 0.20), (16, 0.10), (16, 0.20),
)

ROLLOUT_GOAL_RADIUS = 0.2


class DatasetFormatError(ValueError):
    """Dataset file is corrupt or of an unexpected kind/version."""


@dataclass
class SampleSet:
    """A packed dataset: one observation per row plus a target per row."""

    kind: str  # "steer" | "distance"
    batch: ObservationBatch
    targets: np.ndarray  # (n, 2) actions or (n, 1) cost-to-go
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        dim = 2 if self.kind == "steer" else 1
        self.targets = np.asarray(self.targets, dtype=float).reshape(len(self.batch), dim)

    def __len__(self) -> int:
        return len(self.batch)


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:12]


def _scenario_stream(seed: int, index: int) -> tuple[int, np.random.Generator]:
    ss = np.random.SeedSequence([seed, index])
    gen_seed = int(ss.generate_state(1)[0])
    return gen_seed, np.random.default_rng(ss.spawn(1)[0])


def _concat_batches(parts: list[ObservationBatch]) -> ObservationBatch:
    offsets = np.cumsum([0] + [len(p) for p in parts])

    def cat(rows, owners):
        if not rows:
            return None
        return np.concatenate(rows), np.concatenate(owners)

    rel = np.concatenate([p.rel_goal for p in parts]) if parts else np.zeros((0, 4))
    rob = cat(
        [p.robots for p in parts if p.robots.shape[0]],
        [p.robot_owner + off for p, off in zip(parts, offsets) if p.robots.shape[0]],
    )
    obs = cat(
        [p.obstacles for p in parts if p.obstacles.shape[0]],
        [p.obstacle_owner + off for p, off in zip(parts, offsets) if p.obstacles.shape[0]],
    )
    robots, robot_owner = rob if rob else (np.zeros((0, 4)), np.zeros(0, dtype=np.int64))
    obstacles, obstacle_owner = obs if obs else (np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
    return ObservationBatch(rel, robots, robot_owner, obstacles, obstacle_owner)


def _clip_actions(a: np.ndarray, u_max: float) -> np.ndarray:
    norms = np.linalg.norm(a, axis=-1, keepdims=True)
    scale = np.minimum(1.0, u_max / np.maximum(norms, 1e-12))
    return a * scale


# ---------------------------------------------------------------------------
# Steer dataset
# ---------------------------------------------------------------------------


def steer_samples_from_expert(
    scenario: Scenario, traj: ExpertTrajectory
) -> tuple[ObservationBatch, np.ndarray]:
    """(observation, action) rows for every robot and step of one expert run."""
    n, L = traj.n_robots, traj.n_steps
    P = traj.states[:, :L, 0:2].transpose(1, 0, 2)  # (L, n, 2)
    V = traj.states[:, :L, 2:4].transpose(1, 0, 2)
    T = np.arange(L) * EXPERT_DT
    batch = observation_batch(
        P, V, T, scenario.goals, np.zeros_like(scenario.goals),
        scenario.environment, scenario.params,
    )
    actions = traj.accels.transpose(1, 0, 2).reshape(L * n, 2)
    return batch, _clip_actions(actions, scenario.params.u_max)


def build_steer_dataset(
    n_case: int,
    seed: int = 0,
    kinds: tuple[tuple[int, float], ...] = DEFAULT_KINDS,
    params: ProblemParams | None = None,
    v_nominal: float = 0.3,
    max_samples: int | None = None,
    parked_keep: int | None = 2,
) -> SampleSet:
    """Expert demonstrations over n_case random scenarios, decentralized.

    Robots that finish early sit parked until the joint trajectory ends;
    unchecked, those (zero observation, zero action) rows dominate the data
    (roughly half of it) and drag the learned policy toward inaction, so
    only ``parked_keep`` post-arrival rows per robot are kept. Pass None to
    keep every row.
    """
    if n_case < 1:
        raise ValueError("n_case must be >= 1")
    cfg = {
        "kind": "steer", "n_case": n_case, "seed": seed, "kinds": list(map(list, kinds)),
        "v_nominal": v_nominal, "max_samples": max_samples, "parked_keep": parked_keep,
    }
    parts: list[ObservationBatch] = []
    targets: list[np.ndarray] = []
    failures = 0
    for case in range(n_case):
        n_robots, frac = kinds[case % len(kinds)]
        gen_seed, rng = _scenario_stream(seed, case)
        try:
            scenario = generate_scenario(n_robots, frac, gen_seed, params=params)
            traj = expert_plan(scenario, rng, v_nominal=v_nominal)
        except (ExpertFailure, ScenarioError) as exc:
            failures += 1
            log.debug("case %d skipped: %s", case, exc)
            continue
        batch, actions = steer_samples_from_expert(scenario, traj)
        if parked_keep is not None:
            n, L = traj.n_robots, traj.n_steps
            steps = np.arange(L)[:, None]
            keep = (steps <= traj.arrivals[None, :] + parked_keep).reshape(L * n)
            batch = batch.take(np.flatnonzero(keep))
            actions = actions[keep]
        parts.append(batch)
        targets.append(actions)
    if failures:
        log.info("steer dataset: skipped %d/%d scenarios", failures, n_case)
    if not parts:
        raise ExpertFailure("every scenario failed; no steer data generated")
    batch = _concat_batches(parts)
    y = np.concatenate(targets)
    if max_samples is not None and len(batch) > max_samples:
        keep = np.sort(np.random.default_rng(seed).choice(len(batch), max_samples, replace=False))
        batch, y = batch.take(keep), y[keep]
    meta = {"config_hash": _config_hash(cfg), "skipped": failures, **cfg}
    return SampleSet("steer", batch, y, meta)


# ---------------------------------------------------------------------------
# Distance dataset (steer-policy rollouts)
# ---------------------------------------------------------------------------


@dataclass
class Rollout:
    """One team rollout under the steer policy at EXPERT_DT control steps."""

    states: np.ndarray  # (L+1, n, 4)
    controls: np.ndarray  # (L, n, 2)
    arrived: np.ndarray  # (n,) arrival step or -1
    clean: np.ndarray  # (n,) never involved in an infeasibility


def rollout_policy(scenario: Scenario, model: DeepSetModel, horizon_steps: int | None = None) -> Rollout:
    """Simultaneously roll all robots toward their goals under the model."""
    params = scenario.params
    n = scenario.n_robots
    if horizon_steps is None:
        horizon_steps = int(round(params.goal_time / EXPERT_DT))
    P = np.array([r.p for r in scenario.starts])
    V = np.zeros((n, 2))
    goals = scenario.goals
    states = [np.concatenate([P, V], axis=1)]
    controls: list[np.ndarray] = []
    arrived = np.full(n, -1, dtype=np.int64)
    clean = np.ones(n, dtype=bool)

    boxes = scenario.environment.obstacles
    for k in range(horizon_steps + 1):
        in_ball = np.linalg.norm(P - goals, axis=1) <= ROLLOUT_GOAL_RADIUS
        if k < horizon_steps:  # arrival exactly at the horizon doesn't count
            arrived[in_ball & (arrived < 0)] = k
        if in_ball.all() or k == horizon_steps:
            break
        t = k * EXPERT_DT
        batch = observation_batch(
            P[None], V[None], np.array([t]), goals, np.zeros_like(goals),
            scenario.environment, params,
        )
        u = model.forward_batch(batch).reshape(n, 2)
        P = P + V * EXPERT_DT + 0.5 * u * EXPERT_DT**2
        V = V + u * EXPERT_DT
        controls.append(u)
        states.append(np.concatenate([P, V], axis=1))
        # flag robots involved in a collision; the rollout itself continues
        # (mild overspeed is tolerated: the policy only caps acceleration,
        # and fast-but-collision-free tracks still carry a sound cost signal)
        if n > 1:
            iu, ju = np.triu_indices(n, 1)
            d2 = ((P[iu] - P[ju]) ** 2).sum(axis=1)
            bad = d2 < (2 * params.r_robot) ** 2
            clean[iu[bad]] = False
            clean[ju[bad]] = False
        if boxes.shape[0]:
            c = np.clip(P[:, None, :], boxes[None, :, 0:2], boxes[None, :, 2:4])
            db2 = ((P[:, None, :] - c) ** 2).sum(axis=-1)
            clean[(db2 < params.r_robot**2).any(axis=1)] = False
    return Rollout(np.array(states), np.array(controls).reshape(-1, n, 2), arrived, clean)


def distance_samples_from_rollout(
    scenario: Scenario, rollout: Rollout
) -> tuple[ObservationBatch, np.ndarray] | None:
    """(observation, cost-to-go) rows for robots that arrived cleanly.

    A robot contributes its steps 0..arrival (cost exactly zero on arrival);
    robots that never arrived or that were involved in a violation are
    dropped entirely.
    """
    n = scenario.n_robots
    steps = rollout.states.shape[0]
    effort = (rollout.controls**2).sum(axis=2) * EXPERT_DT  # (L, n)
    full = observation_batch(
        rollout.states[:, :, 0:2], rollout.states[:, :, 2:4],
        np.arange(steps) * EXPERT_DT, scenario.goals, np.zeros_like(scenario.goals),
        scenario.environment, scenario.params,
    )  # rows ordered (step, robot)
    keep_rows: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    for i in range(n):
        k_arr = int(rollout.arrived[i])
        if k_arr < 0 or not rollout.clean[i]:
            continue
        cost = np.zeros(k_arr + 1)
        if k_arr > 0:
            cost[:-1] = np.cumsum(effort[:k_arr, i][::-1])[::-1]
        keep_rows.append(np.arange(k_arr + 1) * n + i)
        targets.append(cost)
    if not keep_rows:
        return None
    batch = full.take(np.concatenate(keep_rows))
    return batch, np.concatenate(targets)[:, None]


def build_distance_dataset(
    steer_model: DeepSetModel,
    n_case: int,
    seed: int = 0,
    kinds: tuple[tuple[int, float], ...] = DEFAULT_KINDS,
    params: ProblemParams | None = None,
    max_samples: int | None = None,
) -> SampleSet:
    """Cost-to-go supervision from steer-policy rollouts on random scenarios."""
    if n_case < 1:
        raise ValueError("n_case must be >= 1")
    cfg = {"kind": "distance", "n_case": n_case, "seed": seed,
           "kinds": list(map(list, kinds)), "max_samples": max_samples}
    parts: list[ObservationBatch] = []
    targets: list[np.ndarray] = []
    skipped = 0
    for case in range(n_case):
        n_robots, frac = kinds[case % len(kinds)]
        gen_seed, _ = _scenario_stream(seed, case)
        try:
            scenario = generate_scenario(n_robots, frac, gen_seed, params=params)
        except ScenarioError:
            skipped += 1
            continue
        rollout = rollout_policy(scenario, steer_model)
        out = distance_samples_from_rollout(scenario, rollout)
        if out is None:
            skipped += 1
            continue
        parts.append(out[0])
        targets.append(out[1])
    if skipped:
        log.info("distance dataset: %d/%d scenarios yielded nothing", skipped, n_case)
    if not parts:
        raise ExpertFailure("no rollout reached a goal; distance dataset empty")
    batch = _concat_batches(parts)
    y = np.concatenate(targets)
    if max_samples is not None and len(batch) > max_samples:
        keep = np.sort(np.random.default_rng(seed).choice(len(batch), max_samples, replace=False))
        batch, y = batch.take(keep), y[keep]
    meta = {"config_hash": _config_hash(cfg), "skipped": skipped, **cfg}
    return SampleSet("distance", batch, y, meta)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_dataset(ds: SampleSet, path) -> None:
    meta = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "kind": ds.kind,
            "count": len(ds), **ds.meta}
    with open(path, "wb") as fh:
        np.savez(
            fh,
            meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
            rel_goal=ds.batch.rel_goal,
            robots=ds.batch.robots,
            robot_owner=ds.batch.robot_owner,
            obstacles=ds.batch.obstacles,
            obstacle_owner=ds.batch.obstacle_owner,
            targets=ds.targets,
        )


def load_dataset(path, expect_kind: str | None = None) -> SampleSet:
    try:
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta.get("format") != DATASET_FORMAT:
                raise DatasetFormatError("not a swarmplan dataset file")
            if meta.get("version") != DATASET_VERSION:
                raise DatasetFormatError(f"unsupported dataset version {meta.get('version')}")
            if expect_kind is not None and meta["kind"] != expect_kind:
                raise DatasetFormatError(f"dataset kind {meta['kind']!r}, expected {expect_kind!r}")
            batch = ObservationBatch(
                data["rel_goal"], data["robots"], data["robot_owner"],
                data["obstacles"], data["obstacle_owner"],
            )
            targets = data["targets"]
    except DatasetFormatError:
        raise
    except Exception as exc:
        raise DatasetFormatError(f"cannot read dataset file {path}: {exc}") from exc
    kind = meta.pop("kind")
    return SampleSet(kind, batch, targets, meta)


def iter_minibatches(ds: SampleSet, batch_size: int, rng: np.random.Generator | None = None):
    """Yield (ObservationBatch, targets) minibatches, shuffled when rng given."""
    order = np.arange(len(ds)) if rng is None else rng.permutation(len(ds))
    for lo in range(0, order.size, batch_size):
        idx = order[lo : lo + batch_size]
        yield ds.batch.take(idx), ds.targets[idx]
