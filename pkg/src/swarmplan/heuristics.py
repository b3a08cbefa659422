"""Steer and distance functions behind uniform interfaces.

The planner talks to a ``DistanceFn`` (node selection) and a ``SteerFn``
(expansion control). Each comes in a baseline flavor (weighted Euclidean /
random-sample steering) and a learned flavor backed by a DeepSetModel.
Batched helpers operate on flat joint-state arrays so the planner hot loop
never materializes per-robot objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .deepset import DeepSetModel, ObservationBatch
from .dynamics import approx_steer, sample_ball
from .world import Control, Environment, JointState, ProblemParams, split_flat


@dataclass(frozen=True)
class DistanceFn:
    """Node-selection metric; learned outputs are non-negative but need not
    be symmetric or satisfy the triangle inequality.

    ``w_v``/``lambda_t`` parameterize the baseline weighted-Euclidean metric
    (also the nearest-index pre-filter). The learned branch adds its own
    time bias ``learned_time_weight``: cost-to-go magnitudes depend on how
    aggressive the demonstrating expert was, so the time term is balanced
    against them separately.
    """

    kind: str  # "baseline" | "learned"
    model: DeepSetModel | None = None
    w_v: float = 0.3
    lambda_t: float = 0.05
    learned_time_weight: float = 0.002

    def __post_init__(self):
        if self.kind not in ("baseline", "learned"):
            raise ValueError(f"unknown distance kind {self.kind!r}")
        if self.kind == "learned" and (self.model is None or self.model.head != "distance"):
            raise ValueError("learned DistanceFn needs a distance-head model")


@dataclass(frozen=True)
class SteerFn:
    kind: str  # "approx" | "learned"
    model: DeepSetModel | None = None
    n_samples: int = 32

    def __post_init__(self):
        if self.kind not in ("approx", "learned"):
            raise ValueError(f"unknown steer kind {self.kind!r}")
        if self.kind == "learned" and (self.model is None or self.model.head != "steer"):
            raise ValueError("learned SteerFn needs a steer-head model")


def baseline_distance_fn(w_v: float = 0.3, lambda_t: float = 0.05) -> DistanceFn:
    return DistanceFn("baseline", None, w_v, lambda_t)


def learned_distance_fn(
    model: DeepSetModel, w_v: float = 0.3, lambda_t: float = 0.05,
    learned_time_weight: float = 0.002,
) -> DistanceFn:
    return DistanceFn("learned", model, w_v, lambda_t, learned_time_weight)


def approx_steer_fn(n_samples: int = 32) -> SteerFn:
    return SteerFn("approx", None, n_samples)


def learned_steer_fn(model: DeepSetModel) -> SteerFn:
    return SteerFn("learned", model)


# ---------------------------------------------------------------------------
# Vectorized local observations
# ---------------------------------------------------------------------------


def observation_batch(
    P: np.ndarray,
    V: np.ndarray,
    T: np.ndarray,
    target_P: np.ndarray,
    target_V: np.ndarray,
    env: Environment,
    params: ProblemParams,
) -> ObservationBatch:
    """Observations for every (state, robot) pair, C-ordered by state then robot.

    P, V: (m, n, 2); T: (m,). Targets may be shared (n, 2) or per-state
    (m, n, 2). Moving discs appear as neighbor robots sampled at each
    state's time.
    """
    P = np.asarray(P, dtype=float)
    V = np.asarray(V, dtype=float)
    T = np.atleast_1d(np.asarray(T, dtype=float))
    m, n, _ = P.shape
    tP = np.broadcast_to(np.asarray(target_P, dtype=float), (m, n, 2))
    tV = np.broadcast_to(np.asarray(target_V, dtype=float), (m, n, 2))
    rel_goal = np.concatenate([tP - P, tV - V], axis=2).reshape(m * n, 4)

    r2 = params.r_sense**2
    if n > 1:
        dp = P[:, None, :, :] - P[:, :, None, :]  # [state, i, j] = p_j - p_i
        dv = V[:, None, :, :] - V[:, :, None, :]
        mask = np.einsum("mijk,mijk->mij", dp, dp) <= r2
        mask &= ~np.eye(n, dtype=bool)[None]
        rows = np.concatenate([dp[mask], dv[mask]], axis=1)
        mi, ii, _ = np.nonzero(mask)
        owner = mi * n + ii
    else:
        rows = np.zeros((0, 4))
        owner = np.zeros(0, dtype=np.int64)

    if env.dynamic_obstacles:
        extra_rows = [rows]
        extra_owner = [owner]
        for disc in env.dynamic_obstacles:
            c = disc.positions_at(T)  # (m, 2)
            cv = disc_velocities_at(disc, T)
            dp = c[:, None, :] - P  # (m, n, 2)
            dmask = np.einsum("mik,mik->mi", dp, dp) <= r2
            if dmask.any():
                dv = cv[:, None, :] - V
                extra_rows.append(np.concatenate([dp[dmask], dv[dmask]], axis=1))
                mi, ii = np.nonzero(dmask)
                extra_owner.append(mi * n + ii)
        rows = np.concatenate(extra_rows)
        owner = np.concatenate(extra_owner)
        order = np.argsort(owner, kind="stable")
        rows, owner = rows[order], owner[order]

    centers = env.obstacle_centers()
    if centers.shape[0]:
        dpo = centers[None, None, :, :] - P[:, :, None, :]  # (m, n, M, 2)
        omask = np.einsum("mijk,mijk->mij", dpo, dpo) <= r2
        obs_rows = dpo[omask]
        mi, ii, _ = np.nonzero(omask)
        obs_owner = mi * n + ii
    else:
        obs_rows = np.zeros((0, 2))
        obs_owner = np.zeros(0, dtype=np.int64)

    return ObservationBatch(rel_goal, rows, owner, obs_rows, obs_owner)


def disc_velocities_at(disc, times: np.ndarray) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    vx = np.interp(times, disc.ts, disc.vs[:, 0])
    vy = np.interp(times, disc.ts, disc.vs[:, 1])
    out = np.stack([vx, vy], axis=-1)
    out[(times < disc.ts[0]) | (times > disc.ts[-1])] = 0.0  # parked outside its span
    return out


# ---------------------------------------------------------------------------
# Joint distance
# ---------------------------------------------------------------------------


def baseline_distance_flat(
    states: np.ndarray, target: np.ndarray, n_robots: int, w_v: float, lambda_t: float
) -> np.ndarray:
    """Weighted-Euclidean + time-bias distance from each flat state to target."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    target = np.asarray(target, dtype=float)
    w = np.ones(4 * n_robots)
    w[2::4] = w_v
    w[3::4] = w_v
    diff = states[:, :-1] - target[:-1]
    return np.sqrt((diff * diff * w).sum(axis=1)) + lambda_t * np.abs(states[:, -1] - target[-1])


def learned_distance_flat(
    d: DistanceFn,
    states: np.ndarray,
    target: np.ndarray,
    n_robots: int,
    env: Environment,
    params: ProblemParams,
) -> np.ndarray:
    """Sum of per-robot learned cost-to-go plus one time-bias term per state."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    target = np.asarray(target, dtype=float)
    m = states.shape[0]
    P, V, T = split_flat(states, n_robots)
    tP, tV, _ = split_flat(target, n_robots)
    batch = observation_batch(P, V, T, tP, tV, env, params)
    per_robot = d.model.forward_batch(batch).reshape(m, n_robots)
    return per_robot.sum(axis=1) + d.learned_time_weight * np.abs(T - target[-1])


def joint_distance(
    d: DistanceFn, x: JointState, x_rand: JointState, env: Environment, params: ProblemParams
) -> float:
    """Distance used for node selection (baseline metric or learned sum)."""
    if x.n_robots != x_rand.n_robots:
        raise ValueError("robot count mismatch")
    state = x.to_vector()[None]
    target = x_rand.to_vector()
    if d.kind == "baseline":
        return float(baseline_distance_flat(state, target, x.n_robots, d.w_v, d.lambda_t)[0])
    return float(learned_distance_flat(d, state, target, x.n_robots, env, params)[0])


# ---------------------------------------------------------------------------
# Joint steer
# ---------------------------------------------------------------------------


def learned_steer_flat(
    model: DeepSetModel,
    state: np.ndarray,
    target: np.ndarray,
    n_robots: int,
    env: Environment,
    params: ProblemParams,
) -> np.ndarray:
    """Stacked per-robot learned controls, shape (n_robots, 2)."""
    P, V, T = split_flat(state[None], n_robots)
    tP, tV, _ = split_flat(np.asarray(target, dtype=float), n_robots)
    batch = observation_batch(P, V, T, tP, tV, env, params)
    return model.forward_batch(batch).reshape(n_robots, 2)


def joint_steer(
    s: SteerFn,
    x_nearest: JointState,
    x_rand: JointState,
    env: Environment,
    params: ProblemParams,
    rng: np.random.Generator,
) -> Control:
    """Expansion control toward x_rand (learned per-robot, or sampled baseline)."""
    if x_nearest.n_robots != x_rand.n_robots:
        raise ValueError("robot count mismatch")
    if s.kind == "approx":
        return approx_steer(x_nearest, x_rand, s.n_samples, params, rng)
    a = learned_steer_flat(
        s.model, x_nearest.to_vector(), x_rand.to_vector(), x_nearest.n_robots, env, params
    )
    return Control(a)


def approx_steer_flat(
    state: np.ndarray,
    target: np.ndarray,
    n_robots: int,
    n_samples: int,
    params: ProblemParams,
    rng: np.random.Generator,
    w_v: float = 0.3,
) -> np.ndarray:
    """Flat-array twin of dynamics.approx_steer used in the planner loop."""
    P, V, _ = split_flat(state, n_robots)
    tP, tV, _ = split_flat(target, n_robots)
    cand = sample_ball(rng, n_samples * n_robots, params.u_max).reshape(n_samples, n_robots, 2)
    dt = 0.5 * (params.dt_min + params.dt_max)
    P2 = P[None] + V[None] * dt + 0.5 * cand * dt * dt
    V2 = V[None] + cand * dt
    d2 = ((P2 - tP[None]) ** 2).sum(axis=(1, 2)) + w_v * ((V2 - tV[None]) ** 2).sum(axis=(1, 2))
    return cand[int(np.argmin(d2))]
