"""Acceptance criteria, one test per criterion, one printed line each.

The session fixture trains both heuristics from scratch at desk scale
(expert demonstrations -> steer model -> policy rollouts -> distance
model). Everything is seeded. Set SWARMPLAN_ACCEPT_CACHE to a directory to
reuse trained artifacts across reruns; by default a fresh tmp dir is used
and the full pipeline runs (tens of minutes of training plus the benchmark
grids; a few hours total on two cores).
"""

import json
import os
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from swarmplan.bench import (
    BenchConfig,
    run_variant_bench,
    swap_demo,
    swap_scenario,
)
from swarmplan.datasets import build_distance_dataset, build_steer_dataset, load_dataset, save_dataset
from swarmplan.deepset import batch_loss, load_model, make_model, save_model
from swarmplan.estimators import DistanceRegressor, SteerRegressor
from swarmplan.heuristics import DistanceFn, SteerFn
from swarmplan.nets import TrainConfig
from swarmplan.planner import PlannerConfig, plan_joint, plan_sequential
from swarmplan.world import Environment, ProblemParams, RobotState, Scenario

pytestmark = pytest.mark.acceptance

WORKERS = 2

# desk-scale pipeline settings (see the decisions ledger for the recipe)
STEER_CASES = 2000
STEER_CAP = 280_000
DIST_CASES = 2500
DIST_CAP = 300_000
TRAIN_KW = dict(batch_size=512, learning_rate=5e-3, epochs=150, random_state=0)
PIPELINE_SEED = 42


def _report(criterion: str, passed: bool, detail: str) -> None:
    print(f"\n[acceptance] criterion {criterion}: {'PASS' if passed else 'FAIL'} ({detail})")


def _val_ratio(estimator, data, targets) -> float:
    """Final validation MSE over the predict-zero MSE on the same split."""
    n = len(data)
    rng = np.random.default_rng(estimator.random_state)
    perm = rng.permutation(n)
    n_val = int(round(n * estimator.validation_fraction))
    val_idx = perm[:n_val] if n_val > 0 else perm
    val_y = np.asarray(targets, dtype=float).reshape(n, -1)[val_idx]
    zero_mse = float((val_y**2).sum(axis=1).mean())
    return estimator.history_[-1][2] / zero_mse


@pytest.fixture(scope="session")
def artifacts(tmp_path_factory):
    cache = os.environ.get("SWARMPLAN_ACCEPT_CACHE")
    root = Path(cache) if cache else tmp_path_factory.mktemp("accept")
    root.mkdir(parents=True, exist_ok=True)
    meta_path = root / "ratios.json"
    steer_path = root / "steer_model.npz"
    dist_path = root / "dist_model.npz"

    if not (meta_path.exists() and steer_path.exists() and dist_path.exists()):
        steer_ds_path = root / "steer_data.npz"
        if steer_ds_path.exists():
            steer_ds = load_dataset(steer_ds_path, expect_kind="steer")
        else:
            steer_ds = build_steer_dataset(STEER_CASES, seed=PIPELINE_SEED, max_samples=STEER_CAP)
            save_dataset(steer_ds, steer_ds_path)
        steer_est = SteerRegressor(**TRAIN_KW)
        steer_est.fit(steer_ds.batch, steer_ds.targets)
        steer_ratio = _val_ratio(steer_est, steer_ds.batch, steer_ds.targets)
        save_model(steer_est.model_, steer_path)

        dist_ds_path = root / "dist_data.npz"
        if dist_ds_path.exists():
            dist_ds = load_dataset(dist_ds_path, expect_kind="distance")
        else:
            dist_ds = build_distance_dataset(
                steer_est.model_, DIST_CASES, seed=PIPELINE_SEED + 1, max_samples=DIST_CAP
            )
            save_dataset(dist_ds, dist_ds_path)
        dist_est = DistanceRegressor(**TRAIN_KW)
        dist_est.fit(dist_ds.batch, dist_ds.targets.ravel())
        dist_ratio = _val_ratio(dist_est, dist_ds.batch, dist_ds.targets)
        save_model(dist_est.model_, dist_path)
        meta_path.write_text(json.dumps({"steer_ratio": steer_ratio, "dist_ratio": dist_ratio}))

    meta = json.loads(meta_path.read_text())
    return {
        "models": {
            "steer": load_model(steer_path, expect_head="steer"),
            "distance": load_model(dist_path, expect_head="distance"),
        },
        "steer_ratio": meta["steer_ratio"],
        "dist_ratio": meta["dist_ratio"],
    }


# ---------------------------------------------------------------------------
# Criterion 1: plain RRT (NONE) fails every 4-robot/10% instance
# ---------------------------------------------------------------------------


def test_criterion_1_none_fails():
    cfg = BenchConfig(
        robot_counts=(4,), obstacle_fractions=(0.10,), instances=25, variants=("NONE",),
        planner=PlannerConfig(node_budget=100_000, seed=0), seed=101, workers=WORKERS,
    )
    records = run_variant_bench(cfg, {})
    successes = sum(r.success for r in records)
    _report("1 (NONE fails 4r/10%)", successes == 0, f"{successes}/25 solved; want 0")
    assert successes == 0


# ---------------------------------------------------------------------------
# Criterion 2: BOTH succeeds (>=60% at 4 robots; >=1 success at 16 robots)
# ---------------------------------------------------------------------------


def test_criterion_2_both_succeeds(artifacts):
    cfg = BenchConfig(
        robot_counts=(4,), obstacle_fractions=(0.10,), instances=25, variants=("BOTH",),
        planner=PlannerConfig(node_budget=300_000, seed=0), seed=101, workers=WORKERS,
    )
    records = run_variant_bench(cfg, artifacts["models"])
    rate4 = sum(r.success for r in records) / len(records)

    cfg16 = replace(cfg, robot_counts=(16,), instances=4)
    records16 = run_variant_bench(cfg16, artifacts["models"])
    wins16 = sum(r.success for r in records16)

    ok = rate4 >= 0.60 and wins16 >= 1
    _report("2 (BOTH succeeds)", ok, f"4r rate {rate4:.0%} (want >=60%); 16r wins {wins16}/4 (want >=1)")
    assert rate4 >= 0.60
    assert wins16 >= 1


# ---------------------------------------------------------------------------
# Criterion 3: ordering trend BOTH <= STEER and BOTH <= DISTANCE
# ---------------------------------------------------------------------------


def test_criterion_3_ordering_trend(artifacts):
    from concurrent.futures import ProcessPoolExecutor

    from swarmplan.bench import _pool_init, _run_cell_instance

    need = 25
    variants = ("BOTH", "STEER", "DISTANCE")
    per_variant: dict[str, list] = {v: [] for v in variants}
    cfg = BenchConfig(
        robot_counts=(4,), obstacle_fractions=(0.10,), instances=60, variants=variants,
        planner=PlannerConfig(node_budget=300_000, seed=0), seed=101, workers=WORKERS,
    )
    instances = 0
    with ProcessPoolExecutor(
        max_workers=WORKERS, initializer=_pool_init, initargs=(artifacts["models"], cfg)
    ) as pool:
        while instances < 60 and any(
            sum(r.success for r in recs) < need for recs in per_variant.values()
        ):
            chunk = list(range(instances, instances + 10))
            jobs = [(v, 4, 0.10, i) for v in variants for i in chunk]
            for rec in pool.map(_run_cell_instance, jobs, chunksize=1):
                per_variant[rec.variant].append(rec)
            instances += 10

    med = {}
    counts = {}
    for v, recs in per_variant.items():
        wins = [r for r in recs if r.success]
        counts[v] = len(wins)
        med[v] = (
            float(np.median([r.nodes for r in wins])) if wins else np.inf,
            float(np.median([r.path_cost for r in wins])) if wins else np.inf,
        )
    enough = all(c >= need for c in counts.values())
    ordered = (
        med["BOTH"][0] <= med["STEER"][0] and med["BOTH"][0] <= med["DISTANCE"][0]
        and med["BOTH"][1] <= med["STEER"][1] and med["BOTH"][1] <= med["DISTANCE"][1]
    )
    detail = (
        f"solved {counts} over {instances} instances; median (nodes, cost): "
        + ", ".join(f"{v}={med[v][0]:.0f}/{med[v][1]:.2f}" for v in per_variant)
    )
    _report("3 (BOTH <= STEER, DISTANCE)", enough and ordered, detail)
    assert enough, f"needed {need} solves per variant, got {counts}"
    assert ordered, detail


# ---------------------------------------------------------------------------
# Criterion 4: swap corridor (joint solves, sequential cannot, widened control)
# ---------------------------------------------------------------------------


def test_criterion_4_swap_corridor(artifacts):
    models = artifacts["models"]
    joint_wins = sum(swap_demo("joint", models, seed=s).solved for s in range(10))
    seq_wins = 0
    for s in range(10):
        order = [0, 1] if s % 2 == 0 else [1, 0]
        seq_wins += swap_demo("sequential", models, seed=s, priority=order).solved
    wide_joint = any(swap_demo("joint", models, seed=s, widened=True).solved for s in range(3))
    wide_seq = any(
        swap_demo("sequential", models, seed=s, widened=True).solved for s in range(3)
    )
    ok = joint_wins >= 8 and seq_wins == 0 and wide_joint and wide_seq
    _report(
        "4 (swap corridor)", ok,
        f"joint {joint_wins}/10 (want >=8); sequential {seq_wins}/10 (want 0); "
        f"widened joint={wide_joint} seq={wide_seq}",
    )
    assert joint_wins >= 8
    assert seq_wins == 0
    assert wide_joint and wide_seq


# ---------------------------------------------------------------------------
# Criterion 5: completeness smoke test under adversarial constant heuristics
# ---------------------------------------------------------------------------


def constant_models() -> dict:
    steer = make_model("steer", seed=0)
    dist = make_model("distance", seed=0)
    for model in (steer, dist):
        for net in model.nets().values():
            for W in net.Ws:
                W[:] = 0.0
            for b in net.bs:
                b[:] = 0.0
    steer.psi.bs[-1][:] = [0.4, 0.0]  # constant pull in +x, wherever the goal is
    dist.psi.bs[-1][:] = 1.0  # constant "distance": learned argmin is uninformative
    return {"steer": steer, "distance": dist}


def _completeness_run(seed: int) -> bool:
    models = constant_models()
    sc = Scenario(
        Environment(), (RobotState((1, 1), (0, 0)),), np.array([[7.0, 7.0]]),
        ProblemParams(r_goal=0.2),
    )
    cfg = PlannerConfig(beta_d=0.5, beta_s=0.5, node_budget=100_000, seed=seed)
    d = DistanceFn("learned", models["distance"])
    s = SteerFn("learned", models["steer"])
    return plan_joint(sc, cfg, d, s).solved


def test_criterion_5_completeness_smoke():
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=WORKERS) as pool:
        wins = sum(pool.map(_completeness_run, range(100), chunksize=5))
    _report("5 (completeness smoke)", wins >= 95, f"{wins}/100 solved; want >=95")
    assert wins >= 95


# ---------------------------------------------------------------------------
# Criterion 6: property suites (delegates to the unit property tests)
# ---------------------------------------------------------------------------


def test_criterion_6_property_suites():
    # the heavy property suites are regular unit tests in this same run;
    # invoke the spec-counted ones directly so this criterion stands alone
    from test_bench import TestCsv, TestRunBench
    from test_datasets import TestSerialization as DatasetRoundTrip
    from test_dynamics import TestMinEffortBvp
    from test_neural import TestForward, TestGradients, TestSerialization
    from test_nnindex import TestAgainstLinearScan
    from test_planner import TestNearest
    from test_world import TestIsFeasible

    TestForward().test_permutation_invariance_1000_cases()
    TestGradients().test_gradients_match_finite_differences_20_configs()
    TestNearest().test_beta_zero_equals_linear_scan_1000_trees()
    TestAgainstLinearScan().test_nearest_matches_oracle_on_1000_trees()
    TestMinEffortBvp().test_never_beaten_by_random_profiles()
    TestIsFeasible().test_against_disc_boundary_oracle()
    import tempfile

    with tempfile.TemporaryDirectory() as td:
        TestSerialization().test_round_trip_bit_identical_forward(Path(td))
        DatasetRoundTrip().test_round_trip(Path(td))
        TestCsv().test_header_and_round_trip(Path(td))
    TestRunBench().test_deterministic_csv()
    ok = True  # reaching here means every suite passed
    _report("6 (property suites)", ok, "perm-invariance, gradients, nearest oracle, "
            "BVP optimality, collision oracle, round-trips, CSV determinism")


# ---------------------------------------------------------------------------
# Criterion 7: training sanity (val MSE <= 50% of predict-zero baseline)
# ---------------------------------------------------------------------------


def test_criterion_7_training_sanity(artifacts):
    sr, dr = artifacts["steer_ratio"], artifacts["dist_ratio"]
    ok = sr <= 0.5 and dr <= 0.5
    _report("7 (training sanity)", ok, f"steer val/zero {sr:.3f}, distance val/zero {dr:.3f}; want <=0.5")
    assert sr <= 0.5, f"steer ratio {sr:.3f} > 0.5"
    assert dr <= 0.5, f"distance ratio {dr:.3f} > 0.5"
