"""Multi-robot kinodynamic RRT with learned decentralized heuristics."""

from .bench import (
    BenchConfig,
    BenchRecord,
    run_variant_bench,
    summarize,
    swap_demo,
    swap_scenario,
)
from .datasets import SampleSet, build_distance_dataset, build_steer_dataset, load_dataset, save_dataset
from .deepset import DeepSetModel, ObservationBatch, load_model, make_model, save_model, train
from .dynamics import (
    BvpSolution,
    Edge,
    InfeasibleEdge,
    approx_steer,
    propagate,
    propagate_checked,
    solve_min_effort_bvp,
)
from .estimators import DistanceRegressor, SteerRegressor
from .expert import ExpertFailure, ExpertTrajectory, expert_plan
from .heuristics import (
    DistanceFn,
    SteerFn,
    approx_steer_fn,
    baseline_distance_fn,
    joint_distance,
    joint_steer,
    learned_distance_fn,
    learned_steer_fn,
)
from .nets import FeedForwardNet, PlateauScheduler, TrainConfig
from .planner import (
    PlannerConfig,
    PlanResult,
    SearchTree,
    StartInfeasible,
    extract_trajectory,
    nearest,
    plan_joint,
    plan_sequential,
    sample_state,
)
from .world import (
    Control,
    Environment,
    JointState,
    Observation,
    ProblemParams,
    RobotState,
    Scenario,
    generate_scenario,
    in_goal,
    is_feasible,
    load_scenario,
    observe,
    path_cost,
    save_scenario,
    scenario_hash,
)

__version__ = "0.1.0"
