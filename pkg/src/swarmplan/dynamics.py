"""Double-integrator propagation, checked edge expansion and steering.

``propagate`` uses the exact quadratic update, which is invariant under
sub-division and therefore consistent with micro-stepped collision
checking. A first-order (``euler=True``) mode is kept for strict
reproduction of the update rule ``p' = p + v*dt``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .world import (
    Control,
    Environment,
    JointState,
    ProblemParams,
    feasible_mask,
    flat_from_parts,
    split_flat,
)

COLLISION_SUBSTEP = 0.05  # at v_max=0.5 this bounds per-substep travel to 0.025 m


class InfeasibleEdge(Exception):
    """Raised by propagate_checked when a micro-state collides."""


@dataclass(frozen=True)
class Edge:
    """One tree expansion: constant joint control applied for dt seconds."""

    from_state: JointState
    control: Control
    dt: float
    micro_states: tuple[JointState, ...]
    to_state: JointState

    def __post_init__(self):
        if not self.micro_states:
            raise ValueError("edge needs at least one micro state")


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------


def propagate(x: JointState, u: Control, dt: float, euler: bool = False) -> JointState:
    """Propagate a joint state under constant accelerations for dt seconds."""
    if dt < 0:
        raise ValueError("negative duration")
    if u.n_robots != x.n_robots:
        raise ValueError("control/state robot count mismatch")
    P = x.positions()
    V = x.velocities()
    if euler:
        P2 = P + V * dt
    else:
        P2 = P + V * dt + 0.5 * u.a * dt * dt
    V2 = V + u.a * dt
    return JointState.from_vector(flat_from_parts(P2, V2, x.t + dt))


def _micro_offsets(dt: float, substep: float = COLLISION_SUBSTEP) -> np.ndarray:
    """Sub-step time offsets in (0, dt]; the last offset lands exactly on dt."""
    n = max(1, int(np.ceil(dt / substep - 1e-9)))
    ts = substep * np.arange(1, n + 1)
    ts[-1] = dt
    return ts


def micro_states_flat(
    state: np.ndarray, a: np.ndarray, dt: float, n_robots: int, euler: bool = False
) -> np.ndarray:
    """All micro-step joint vectors for one expansion, shape (k, 4n+1)."""
    P, V, t = split_flat(state, n_robots)
    ts = _micro_offsets(dt)
    if euler:
        # sequential first-order stepping; endpoint is the final micro state
        out = np.empty((ts.size, state.size))
        p, v = P.copy(), V.copy()
        prev = 0.0
        for k, tk in enumerate(ts):
            h = tk - prev
            p = p + v * h
            v = v + a * h
            out[k] = flat_from_parts(p, v, float(t) + tk)
            prev = tk
        return out
    tcol = ts[:, None, None]
    Pm = P[None] + V[None] * tcol + 0.5 * a[None] * tcol**2
    Vm = V[None] + a[None] * tcol
    return flat_from_parts(Pm, Vm, float(t) + ts)


def edge_feasible_flat(
    state: np.ndarray,
    a: np.ndarray,
    dt: float,
    n_robots: int,
    env: Environment,
    params: ProblemParams,
    euler: bool = False,
) -> np.ndarray | None:
    """Fast path: micro-check an expansion, return the endpoint vector or None."""
    micro = micro_states_flat(state, a, dt, n_robots, euler=euler)
    P, V, t = split_flat(micro, n_robots)
    if not feasible_mask(P, V, t, env, params).all():
        return None
    return micro[-1]


def propagate_checked(
    x: JointState,
    u: Control,
    dt: float,
    env: Environment,
    params: ProblemParams,
    euler: bool = False,
) -> Edge:
    """Propagate in collision sub-steps; raise InfeasibleEdge on any violation.

    A single endpoint check can tunnel through thin obstacles or other
    robots at dt up to 0.75 s, so every micro-state is checked.
    """
    if dt <= 0:
        raise ValueError("non-positive duration")
    state = x.to_vector()
    micro = micro_states_flat(state, u.a, dt, x.n_robots, euler=euler)
    P, V, t = split_flat(micro, x.n_robots)
    ok = feasible_mask(P, V, t, env, params)
    if not ok.all():
        raise InfeasibleEdge(f"collision at micro-step {int(np.argmin(ok))}")
    states = tuple(JointState.from_vector(m) for m in micro)
    return Edge(x, u, float(dt), states, states[-1])


# ---------------------------------------------------------------------------
# Baseline steering
# ---------------------------------------------------------------------------


def sample_ball(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    """n points uniform over the disc of given radius, shape (n, 2)."""
    r = radius * np.sqrt(rng.random(n))
    th = rng.random(n) * 2 * np.pi
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)


def approx_steer(
    x_from: JointState,
    x_to: JointState,
    n_samples: int,
    params: ProblemParams,
    rng: np.random.Generator,
    w_v: float = 0.3,
) -> Control:
    """Sample random joint controls and keep the one ending closest to x_to.

    Candidates are drawn uniformly from the product of admissible balls and
    propagated for the midpoint duration (dt_min + dt_max) / 2; closeness is
    the baseline weighted-Euclidean distance (all candidates share the same
    time, so the time-bias term cannot affect the argmin).
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if x_from.n_robots != x_to.n_robots:
        raise ValueError("robot count mismatch")
    n = x_from.n_robots
    cand = sample_ball(rng, n_samples * n, params.u_max).reshape(n_samples, n, 2)
    dt = 0.5 * (params.dt_min + params.dt_max)
    P = x_from.positions()[None]
    V = x_from.velocities()[None]
    P2 = P + V * dt + 0.5 * cand * dt * dt
    V2 = V + cand * dt
    dp = P2 - x_to.positions()[None]
    dv = V2 - x_to.velocities()[None]
    d2 = (dp**2).sum(axis=(1, 2)) + w_v * (dv**2).sum(axis=(1, 2))
    return Control(cand[int(np.argmin(d2))])


# ---------------------------------------------------------------------------
# Minimum-effort boundary value problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BvpSolution:
    """Fixed-duration minimum-effort connection for a single robot.

    The acceleration is affine in time per axis: a(t) = k1 + k2 * t, which
    is the classical cubic-position solution of minimizing the integral of
    the squared acceleration.
    """

    p0: np.ndarray
    v0: np.ndarray
    k1: np.ndarray  # (2,)
    k2: np.ndarray  # (2,)
    duration: float
    effort_cost: float

    def accel(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.k1 + np.multiply.outer(t, self.k2)

    def vel(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.v0 + np.multiply.outer(t, self.k1) + np.multiply.outer(t**2 / 2, self.k2)

    def pos(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (
            self.p0
            + np.multiply.outer(t, self.v0)
            + np.multiply.outer(t**2 / 2, self.k1)
            + np.multiply.outer(t**3 / 6, self.k2)
        )

    def max_accel(self) -> float:
        # |a| per axis is affine in t, so the norm maximum is at an endpoint
        a0 = np.linalg.norm(self.accel(0.0))
        a1 = np.linalg.norm(self.accel(self.duration))
        return float(max(a0, a1))


def solve_bvp_arrays(p0, v0, p1, v1, T_f: float) -> BvpSolution:
    """Array-level BVP solve; see solve_min_effort_bvp."""
    if T_f <= 0:
        raise ValueError("duration must be positive")
    p0 = np.asarray(p0, dtype=float).reshape(2)
    v0 = np.asarray(v0, dtype=float).reshape(2)
    p1 = np.asarray(p1, dtype=float).reshape(2)
    v1 = np.asarray(v1, dtype=float).reshape(2)
    T = float(T_f)
    dv = v1 - v0
    dp = p1 - p0 - v0 * T
    k2 = (6.0 * dv * T - 12.0 * dp) / T**3
    k1 = 6.0 * dp / T**2 - 2.0 * dv / T
    cost = float((k1 @ k1) * T + (k1 @ k2) * T**2 + (k2 @ k2) * T**3 / 3.0)
    return BvpSolution(p0, v0, k1, k2, T, cost)


def solve_min_effort_bvp(x0, x1, T_f: float) -> BvpSolution:
    """Minimum-effort connection between two RobotStates over T_f seconds."""
    return solve_bvp_arrays(x0.p, x0.v, x1.p, x1.v, T_f)


def solve_min_effort_bvp_free_time(
    x0_p, x0_v, x1_p, x1_v, lambda_time: float = 0.05, t_max: float = 30.0
) -> BvpSolution:
    """Golden-section search over the duration minimizing cost + lambda_time*T."""

    def objective(T: float) -> float:
        sol = solve_bvp_arrays(x0_p, x0_v, x1_p, x1_v, T)
        return sol.effort_cost + lambda_time * T

    lo, hi = 1e-3, float(t_max)
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(80):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = objective(d)
    return solve_bvp_arrays(x0_p, x0_v, x1_p, x1_v, 0.5 * (a + b))


def discrete_min_effort_profile(p0, v0, p1, v1, n_steps: int, dt: float) -> np.ndarray:
    """Piecewise-constant accelerations (n_steps, 2) meeting the endpoints exactly.

    Discrete analog of the affine-acceleration BVP solution: minimizing the
    sum of squared step accelerations under the exact discrete dynamics
    gives a_j affine in j. Exact endpoint satisfaction makes trajectories
    built from these profiles propagate-consistent to machine precision.
    """
    if n_steps < 2:
        raise ValueError("need at least two steps to meet position and velocity")
    p0 = np.asarray(p0, dtype=float).reshape(2)
    v0 = np.asarray(v0, dtype=float).reshape(2)
    p1 = np.asarray(p1, dtype=float).reshape(2)
    v1 = np.asarray(v1, dtype=float).reshape(2)
    n = int(n_steps)
    w = n - np.arange(n) - 0.5  # weights of a_j in the position constraint
    s1 = float(w.sum())
    s2 = float((w**2).sum())
    A = (v1 - v0) / dt
    B = (p1 - p0 - n * dt * v0) / dt**2
    det = n * s2 - s1 * s1
    lam = (s2 * A - s1 * B) / det
    mu = (n * B - s1 * A) / det
    return lam[None, :] + np.multiply.outer(w, mu)
