import numpy as np
import pytest

from swarmplan.deepset import make_model
from swarmplan.dynamics import approx_steer
from swarmplan.heuristics import (
    DistanceFn,
    SteerFn,
    approx_steer_flat,
    approx_steer_fn,
    baseline_distance_fn,
    joint_distance,
    joint_steer,
    learned_distance_fn,
    learned_steer_fn,
    observation_batch,
)
from swarmplan.world import (
    DynamicDisc,
    Environment,
    JointState,
    ProblemParams,
    RobotState,
    observe,
    split_flat,
)

PARAMS = ProblemParams()


def joint(*pv, t=0.0):
    return JointState(tuple(RobotState(p, v, t) for p, v in pv))


class TestBaselineDistance:
    def test_identical_states_zero(self):
        d = baseline_distance_fn()
        x = joint(((1, 2), (0.1, 0)), ((3, 4), (0, 0.2)))
        assert joint_distance(d, x, x, Environment(), PARAMS) == 0.0

    def test_hand_value_with_time_bias(self):
        # |dp| = 0.5, dv = 0, dt = 2 -> 0.5 + 0.05 * 2 = 0.6
        d = baseline_distance_fn(w_v=0.3, lambda_t=0.05)
        a = joint(((0, 0), (0.1, 0.1)), t=0.0)
        b = joint(((0.3, 0.4), (0.1, 0.1)), t=2.0)
        assert joint_distance(d, a, b, Environment(), PARAMS) == pytest.approx(0.6)

    def test_metric_axioms_on_random_triples(self):
        d = baseline_distance_fn()
        rng = np.random.default_rng(0)
        for _ in range(300):
            pts = [
                joint(*[(rng.uniform(0, 8, 2), rng.uniform(-0.5, 0.5, 2)) for _ in range(2)],
                      t=rng.uniform(0, 60))
                for _ in range(3)
            ]
            a, b, c = pts
            dab = joint_distance(d, a, b, Environment(), PARAMS)
            dba = joint_distance(d, b, a, Environment(), PARAMS)
            dac = joint_distance(d, a, c, Environment(), PARAMS)
            dcb = joint_distance(d, c, b, Environment(), PARAMS)
            assert dab == pytest.approx(dba, rel=1e-12)
            assert dab >= 0
            assert dab <= dac + dcb + 1e-9
        x = pts[0]
        assert joint_distance(d, x, x, Environment(), PARAMS) == 0.0

    def test_robot_count_mismatch(self):
        d = baseline_distance_fn()
        with pytest.raises(ValueError):
            joint_distance(d, joint(((0, 0), (0, 0))),
                           joint(((0, 0), (0, 0)), ((1, 1), (0, 0))), Environment(), PARAMS)


class TestLearnedDistance:
    def test_nonnegative_at_zero_displacement(self):
        model = make_model("distance", seed=1)
        d = learned_distance_fn(model)
        x = joint(((2, 2), (0, 0)), ((5, 5), (0, 0)))
        val = joint_distance(d, x, x, Environment(), PARAMS)
        assert val >= 0.0

    def test_sums_per_robot_heads_plus_time_bias(self):
        model = make_model("distance", seed=2)
        d = learned_distance_fn(model, learned_time_weight=0.05)
        x = joint(((1, 1), (0.1, 0)), ((6, 6), (0, 0)), t=1.0)
        x_rand = joint(((4, 2), (0, 0.2)), ((3, 3), (0.1, 0)), t=7.0)
        goals = [RobotState((4, 2), (0, 0.2), 0.0), RobotState((3, 3), (0.1, 0), 0.0)]
        per_robot = sum(
            float(model.forward(observe(x, goals, Environment(), PARAMS, i))[0])
            for i in range(2)
        )
        want = per_robot + 0.05 * 6.0
        got = joint_distance(d, x, x_rand, Environment(), PARAMS)
        assert got == pytest.approx(want, rel=1e-9)

    def test_learned_fn_requires_distance_head(self):
        with pytest.raises(ValueError):
            DistanceFn("learned", make_model("steer", seed=0))


class TestJointSteer:
    def test_learned_outputs_admissible_and_stacked(self):
        model = make_model("steer", seed=3, u_max=0.5)
        s = learned_steer_fn(model)
        rng = np.random.default_rng(1)
        x = joint(((1, 1), (0, 0)), ((2, 2), (0.1, 0)), ((6, 1), (0, 0)))
        xr = joint(((5, 5), (0, 0)), ((1, 7), (0, 0)), ((2, 2), (0, 0)))
        u = joint_steer(s, x, xr, Environment(), PARAMS, rng)
        assert u.a.shape == (3, 2)
        assert u.is_admissible(0.5)

    def test_learned_matches_per_robot_observe(self):
        model = make_model("steer", seed=4)
        s = learned_steer_fn(model)
        env = Environment(obstacles=np.array([[3, 3, 4, 4.0]]))
        x = joint(((1, 1), (0.1, -0.1)), ((3.2, 2.5), (0, 0)))
        xr = joint(((7, 7), (0.2, 0)), ((0, 1), (0, 0.3)))
        u = joint_steer(s, x, xr, env, PARAMS, np.random.default_rng(0))
        targets = [RobotState(r.p, r.v, 0.0) for r in xr.robots]
        for i in range(2):
            want = model.forward(observe(x, targets, env, PARAMS, i))
            assert np.allclose(u.a[i], want, atol=1e-12)

    def test_permutation_equivariance(self):
        model = make_model("steer", seed=5)
        s = learned_steer_fn(model)
        rng = np.random.default_rng(2)
        for _ in range(25):
            pts = rng.uniform(0, 8, (4, 2))
            vel = rng.uniform(-0.4, 0.4, (4, 2))
            tp = rng.uniform(0, 8, (4, 2))
            tv = rng.uniform(-0.4, 0.4, (4, 2))
            x = joint(*[(p, v) for p, v in zip(pts, vel)])
            xr = joint(*[(p, v) for p, v in zip(tp, tv)])
            u = joint_steer(s, x, xr, Environment(), PARAMS, rng)
            perm = rng.permutation(4)
            xp = joint(*[(pts[i], vel[i]) for i in perm])
            xrp = joint(*[(tp[i], tv[i]) for i in perm])
            up = joint_steer(s, xp, xrp, Environment(), PARAMS, rng)
            assert np.allclose(up.a, u.a[perm], atol=1e-9)

    def test_baseline_delegates_to_approx_steer(self):
        s = approx_steer_fn(n_samples=16)
        x = joint(((1, 1), (0, 0)))
        xr = joint(((6, 6), (0, 0)))
        got = joint_steer(s, x, xr, Environment(), PARAMS, np.random.default_rng(7))
        want = approx_steer(x, xr, 16, PARAMS, np.random.default_rng(7))
        assert np.array_equal(got.a, want.a)

    def test_flat_twin_matches_object_version(self):
        x = joint(((1, 1), (0.1, 0)), ((4, 4), (0, 0)))
        xr = joint(((6, 6), (0, 0)), ((2, 1), (0, 0)))
        a = approx_steer_flat(x.to_vector(), xr.to_vector(), 2, 12, PARAMS,
                              np.random.default_rng(3))
        b = approx_steer(x, xr, 12, PARAMS, np.random.default_rng(3))
        assert np.allclose(a, b.a, atol=1e-12)

    def test_steer_fn_requires_steer_head(self):
        with pytest.raises(ValueError):
            SteerFn("learned", make_model("distance", seed=0))


class TestObservationBatch:
    def test_matches_world_observe(self):
        rng = np.random.default_rng(5)
        env = Environment(
            obstacles=np.array([[2, 2, 3, 3], [5, 5, 6, 6.0]]),
            dynamic_obstacles=(
                DynamicDisc(np.array([0.0, 10.0]), np.array([[1.0, 1.0], [3.0, 1.0]]),
                            np.array([[0.2, 0.0], [0.2, 0.0]]), 0.125),
            ),
        )
        for _ in range(20):
            n = int(rng.integers(1, 5))
            P = rng.uniform(0, 8, (n, 2))
            V = rng.uniform(-0.4, 0.4, (n, 2))
            t = float(rng.uniform(0, 12))
            tP = rng.uniform(0, 8, (n, 2))
            tV = rng.uniform(-0.4, 0.4, (n, 2))
            batch = observation_batch(P[None], V[None], np.array([t]), tP, tV, env, PARAMS)
            obs_list = batch.to_observations()
            x = joint(*[(P[i], V[i]) for i in range(n)], t=t)
            targets = [RobotState(tP[i], tV[i], 0.0) for i in range(n)]
            for i in range(n):
                want = observe(x, targets, env, PARAMS, i)
                got = obs_list[i]
                assert np.allclose(got.rel_goal, want.rel_goal)
                assert np.allclose(got.neighbor_robots, want.neighbor_robots)
                assert np.allclose(got.neighbor_obstacles, want.neighbor_obstacles)

    def test_split_flat_round_trip(self):
        x = joint(((1, 2), (0.1, 0.2)), ((3, 4), (0.3, 0.4)), t=5.0)
        P, V, t = split_flat(x.to_vector(), 2)
        assert np.array_equal(P, [[1, 2], [3, 4]])
        assert np.array_equal(V, [[0.1, 0.2], [0.3, 0.4]])
        assert t == 5.0
