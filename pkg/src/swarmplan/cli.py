"""Command-line interface.

Subcommands cover the full pipeline: scenario generation, expert data,
training, rollout data, planning, the variant benchmark, the swap-corridor
demo and SVG rendering. Options come from an optional JSON config file
with flag overrides; every run logs its resolved configuration.

Exit codes: 0 ok, 1 planning failure, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

log = logging.getLogger("swarmplan")


def _load_models(args) -> dict:
    from .deepset import load_model

    models = {}
    if getattr(args, "steer_model", None):
        models["steer"] = load_model(args.steer_model, expect_head="steer")
    if getattr(args, "distance_model", None):
        models["distance"] = load_model(args.distance_model, expect_head="distance")
    return models


def _resolved(args, keys) -> dict:
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def cmd_gen_scenarios(args) -> int:
    from .world import generate_scenario, save_scenario

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        sc = generate_scenario(args.n_robots, args.obstacle_frac, args.seed + i)
        save_scenario(sc, out_dir / f"scenario_{args.seed + i:05d}.txt")
    log.info("wrote %d scenarios to %s", args.count, out_dir)
    return 0


def cmd_expert_data(args) -> int:
    from .datasets import DEFAULT_KINDS, build_steer_dataset, save_dataset

    kinds = _parse_kinds(args.kinds) if args.kinds else DEFAULT_KINDS
    ds = build_steer_dataset(
        args.cases, seed=args.seed, kinds=kinds, max_samples=args.max_samples
    )
    save_dataset(ds, args.out)
    log.info("steer dataset: %d samples -> %s", len(ds), args.out)
    return 0


def cmd_rollout_data(args) -> int:
    from .datasets import DEFAULT_KINDS, build_distance_dataset, save_dataset
    from .deepset import load_model

    steer = load_model(args.steer_model, expect_head="steer")
    kinds = _parse_kinds(args.kinds) if args.kinds else DEFAULT_KINDS
    ds = build_distance_dataset(
        steer, args.cases, seed=args.seed, kinds=kinds, max_samples=args.max_samples
    )
    save_dataset(ds, args.out)
    log.info("distance dataset: %d samples -> %s", len(ds), args.out)
    return 0


def cmd_train(args) -> int:
    from .datasets import load_dataset
    from .deepset import save_model
    from .estimators import DistanceRegressor, SteerRegressor
    from .nets import write_history_csv

    ds = load_dataset(args.data, expect_kind=args.target)
    common = dict(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
        random_state=args.seed,
    )
    est = SteerRegressor(**common) if args.target == "steer" else DistanceRegressor(**common)
    log.info("training %s model on %d samples: %s", args.target, len(ds), common)
    est.fit(ds.batch, ds.targets if args.target == "steer" else ds.targets.ravel())
    save_model(est.model_, args.out)
    if args.history:
        write_history_csv(est.history_, args.history)
    final = est.history_[-1]
    log.info("done: train %.5f val %.5f -> %s", final[1], final[2], args.out)
    return 0


def cmd_plan(args) -> int:
    from .bench import variant_config, variant_heuristics
    from .planner import PlannerConfig, plan_joint, plan_sequential, save_plan
    from .render import save_svg
    from .world import load_scenario, scenario_hash

    scenario = load_scenario(args.scenario)
    models = _load_models(args)
    cfg = variant_config(
        args.variant, PlannerConfig(node_budget=args.budget, seed=args.seed)
    )
    d, s = variant_heuristics(args.variant, models)
    plan = plan_sequential if args.mode == "sequential" else plan_joint
    res = plan(scenario, cfg, d, s)
    log.info("status=%s nodes=%d iters=%d cost=%s", res.status, res.nodes_total,
             res.iterations, res.path_cost)
    if args.out:
        save_plan(res, scenario_hash(scenario), cfg, args.out)
    if args.svg:
        save_svg(scenario, res, args.svg)
    return 0 if res.solved else 1


def cmd_bench(args) -> int:
    from .bench import BenchConfig, emit_csv, format_summary, run_variant_bench, summarize
    from .planner import PlannerConfig

    file_cfg = {}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text())
    planner = PlannerConfig(**file_cfg.get("planner", {}))
    if args.budget:
        from dataclasses import replace

        planner = replace(planner, node_budget=args.budget)
    cfg = BenchConfig(
        robot_counts=tuple(args.robots or file_cfg.get("robot_counts", (4, 8, 16))),
        obstacle_fractions=tuple(args.fracs or file_cfg.get("obstacle_fractions", (0.10, 0.20))),
        instances=args.instances or file_cfg.get("instances", 25),
        variants=tuple(args.variants or file_cfg.get("variants", ("NONE", "STEER", "DISTANCE", "BOTH"))),
        planner=planner,
        mode=args.mode or file_cfg.get("mode", "joint"),
        budget_mode=file_cfg.get("budget_mode", "nodes"),
        seed=args.seed if args.seed is not None else file_cfg.get("seed", 0),
        workers=args.workers if args.workers is not None else file_cfg.get("workers", 0),
        record_walltime=bool(file_cfg.get("record_walltime", False)),
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {
        "robot_counts": list(cfg.robot_counts),
        "obstacle_fractions": list(cfg.obstacle_fractions),
        "instances": cfg.instances, "variants": list(cfg.variants),
        "mode": cfg.mode, "budget_mode": cfg.budget_mode, "seed": cfg.seed,
        "workers": cfg.workers, "planner": cfg.planner.__dict__,
    }
    (out_dir / "resolved_config.json").write_text(json.dumps(resolved, indent=2))
    log.info("bench config: %s", resolved)
    records = run_variant_bench(cfg, _load_models(args))
    emit_csv(records, out_dir / "records.csv")
    summary = format_summary(summarize(records))
    (out_dir / "summary.txt").write_text(summary + "\n")
    print(summary)
    return 0


def cmd_swap_demo(args) -> int:
    from .bench import swap_demo, swap_scenario
    from .planner import PlannerConfig, save_plan
    from .render import save_svg
    from .world import scenario_hash

    models = _load_models(args)
    res = swap_demo(
        args.mode, models, seed=args.seed, node_budget=args.budget, widened=args.widened
    )
    scenario = swap_scenario(widened=args.widened)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_plan(res, scenario_hash(scenario), PlannerConfig(node_budget=args.budget, seed=args.seed),
              out_dir / f"swap_{args.mode}.txt")
    save_svg(scenario, res, out_dir / f"swap_{args.mode}.svg")
    log.info("swap %s: %s (nodes=%d)", args.mode, res.status, res.nodes_total)
    return 0 if res.solved else 1


def cmd_render(args) -> int:
    from .render import save_svg
    from .world import load_scenario

    scenario = load_scenario(args.scenario)
    save_svg(scenario, None, args.out)
    return 0


def _parse_kinds(spec: str):
    # "4:0.1,8:0.2" -> ((4, 0.1), (8, 0.2))
    out = []
    for part in spec.split(","):
        n, frac = part.split(":")
        out.append((int(n), float(frac)))
    return tuple(out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarmplan", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenarios", help="write random scenario files")
    g.add_argument("--n-robots", type=int, default=4)
    g.add_argument("--obstacle-frac", type=float, default=0.10)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_gen_scenarios)

    e = sub.add_parser("expert-data", help="build the steer dataset from the expert")
    e.add_argument("--cases", type=int, default=2000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--kinds", help="robot:frac list, e.g. 4:0.1,8:0.2")
    e.add_argument("--max-samples", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_expert_data)

    r = sub.add_parser("rollout-data", help="build the distance dataset from rollouts")
    r.add_argument("--steer-model", required=True)
    r.add_argument("--cases", type=int, default=600)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--kinds")
    r.add_argument("--max-samples", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rollout_data)

    t = sub.add_parser("train", help="train a heuristic model")
    t.add_argument("--target", choices=("steer", "distance"), required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--history", help="loss history CSV path")
    t.add_argument("--epochs", type=int, default=150)
    t.add_argument("--batch-size", type=int, default=4096)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    pl = sub.add_parser("plan", help="plan one scenario file")
    pl.add_argument("--scenario", required=True)
    pl.add_argument("--variant", choices=("NONE", "STEER", "DISTANCE", "BOTH"), default="BOTH")
    pl.add_argument("--mode", choices=("joint", "sequential"), default="joint")
    pl.add_argument("--steer-model")
    pl.add_argument("--distance-model")
    pl.add_argument("--budget", type=int, default=100_000)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--out")
    pl.add_argument("--svg")
    pl.set_defaults(func=cmd_plan)

    b = sub.add_parser("bench", help="run the variant benchmark grid")
    b.add_argument("--config", help="JSON config file")
    b.add_argument("--robots", type=int, nargs="*")
    b.add_argument("--fracs", type=float, nargs="*")
    b.add_argument("--instances", type=int)
    b.add_argument("--variants", nargs="*")
    b.add_argument("--budget", type=int)
    b.add_argument("--mode", choices=("joint", "sequential"))
    b.add_argument("--seed", type=int)
    b.add_argument("--workers", type=int)
    b.add_argument("--steer-model")
    b.add_argument("--distance-model")
    b.add_argument("--out-dir", required=True)
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("swap-demo", help="run the swap-corridor example")
    s.add_argument("--mode", choices=("joint", "sequential"), default="joint")
    s.add_argument("--steer-model", required=True)
    s.add_argument("--distance-model", required=True)
    s.add_argument("--budget", type=int, default=150_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--widened", action="store_true")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_swap_demo)

    rd = sub.add_parser("render", help="render a scenario file to SVG")
    rd.add_argument("--scenario", required=True)
    rd.add_argument("--out", required=True)
    rd.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, KeyError, RuntimeError) as exc:
        log.error("configuration error: %s", exc)
        return 2
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
