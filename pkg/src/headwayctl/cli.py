"""Command-line entry points for simulation, sweeps, and training.

Subcommands write plain CSV/JSON artifacts into an output directory so
results can be inspected or plotted without this package.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .config import (ScenarioConfig, desk_scenario, load_scenario,
                     multi_lane_scenario, save_scenario,
                     single_lane_scenario)
from .control import (FixedHeadwayController, PolicyController,
                      TimedZoneController, sweep_fixed_headway)
from .engine import CollisionError, SpeedZone, run_episode
from .learn.nets import load_params
from .learn.ppo import TrainConfig
from .learn.train import evaluate_policy, train
from .metrics import exit_throughput, mean_ci, paired_speed_change

EXIT_COLLISION = 2

PRESETS = {
    "single": single_lane_scenario,
    "multi": multi_lane_scenario,
    "desk": desk_scenario,
}


def _load_cfg(args: argparse.Namespace, **overrides) -> ScenarioConfig:
    if args.scenario in PRESETS:
        return PRESETS[args.scenario](**overrides)
    cfg = load_scenario(args.scenario)
    if overrides:
        raise SystemExit("overrides require a preset scenario")
    return cfg


def _seed_list(args: argparse.Namespace) -> list[int]:
    if args.seed_list:
        return [int(s) for s in args.seed_list.split(",")]
    return list(range(args.seeds))


def _make_controller(cfg: ScenarioConfig, spec: str):
    """Parse a controller spec: human | fixed:<T> | policy:<ckpt.npz>."""
    if spec == "human":
        return None
    if spec.startswith("fixed:"):
        return FixedHeadwayController(cfg, float(spec.split(":", 1)[1]))
    if spec.startswith("policy:"):
        params, _ = load_params(spec.split(":", 1)[1])
        return PolicyController(cfg, params, stochastic=False)
    raise SystemExit(f"unknown controller spec: {spec!r}")


def _cmd_simulate(args: argparse.Namespace) -> int:
    overrides = {}
    if args.cav_fraction is not None:
        overrides["cav_fraction"] = args.cav_fraction
    cfg = _load_cfg(args, **overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _seed_list(args)
    changes = []
    rows = []
    for seed in seeds:
        controller = _make_controller(cfg, args.controller)
        rec = run_episode(cfg, controller, seed=seed)
        row = {"seed": seed, "return": rec.episode_return(),
               "min_gap": float(rec.min_gap.min()),
               "max_queue": int(rec.queue_len.max()),
               "completed": int(rec.exited_cum[-1])}
        if args.controller != "human":
            base = run_episode(cfg, None, seed=seed)
            change = paired_speed_change(rec, base)
            changes.append(change)
            row["speed_change"] = change
        rows.append(row)
        if args.save_episodes:
            rec.save_vehicles_csv(out / f"vehicles_seed{seed}.csv")
            rec.save_steps_csv(out / f"steps_seed{seed}.csv")
    report = {"scenario": args.scenario, "controller": args.controller,
              "seeds": seeds, "episodes": rows,
              "config_fingerprint": cfg.fingerprint()}
    if changes:
        mean, lo, hi = mean_ci(changes)
        report["speed_change"] = {"mean": mean, "ci95": [lo, hi]}
    (out / "report.json").write_text(json.dumps(report, indent=2))
    save_scenario(cfg, out / "scenario.yaml")
    print(json.dumps(report.get("speed_change",
                               {"episodes": len(rows)}), indent=2))
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    overrides = {}
    if args.cav_fraction is not None:
        overrides["cav_fraction"] = args.cav_fraction
    cfg = _load_cfg(args, **overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    values = [float(v) for v in args.values.split(",")]
    result = sweep_fixed_headway(cfg, values, _seed_list(args))
    with open(out / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write("headway,mean_change,ci_lower,ci_upper\n")
        for r in result.rows:
            fh.write(f"{r.headway},{r.mean_change!r},"
                     f"{r.ci_lower!r},{r.ci_upper!r}\n")
    print(f"best fixed headway: {result.best_headway}")
    for r in result.rows:
        print(f"  T={r.headway:4.1f}  mean {r.mean_change:+.4f}  "
              f"ci [{r.ci_lower:+.4f}, {r.ci_upper:+.4f}]")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = TrainConfig(budget_steps=args.budget_steps,
                       batch_size=args.batch_size,
                       learning_rate=args.learning_rate,
                       epochs=args.epochs)
    result = train(cfg, tcfg, seed=args.seed, out_dir=out,
                   resume=args.resume, log=print)
    if args.eval_seeds > 0:
        changes = evaluate_policy(cfg, result.params,
                                  range(args.eval_seeds))
        mean, lo, hi = mean_ci(changes)
        print(f"eval speed change: {mean:+.4f} ci [{lo:+.4f}, {hi:+.4f}]")
    print(f"trained {result.iterations} iterations, "
          f"{result.env_steps} engine steps")
    return 0


def _cmd_timespace(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    controller = _make_controller(cfg, args.controller)
    rec = run_episode(cfg, controller, seed=args.seed)
    flow = rec.density * rec.mean_speed  # veh/km * m/s
    header = ",".join(f"seg{j:02d}" for j in range(rec.mean_speed.shape[1]))
    for name, grid in (("speed", rec.mean_speed),
                       ("density", rec.density),
                       ("throughput", flow)):
        np.savetxt(out / f"{name}.csv", grid, delimiter=",",
                   header=header, comments="")
    print(f"wrote speed/density/throughput grids to {out}")
    return 0


def _cmd_zone(args: argparse.Namespace) -> int:
    """Open-loop zone intervention: headway command vs speed limit."""
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0, t1 = args.start, args.start + args.duration
    runs = {
        "baseline": dict(controller=None, speed_zone=None),
        "headway": dict(
            controller=TimedZoneController(cfg, args.headway, t0, t1),
            speed_zone=None),
        "speed_limit": dict(controller=None, speed_zone=SpeedZone(
            start_x=args.zone_start, end_x=args.zone_end,
            limit=args.speed_limit, t_start=t0, t_end=t1)),
    }
    summary = {}
    for name, kw in runs.items():
        rec = run_episode(cfg, kw["controller"], seed=args.seed,
                          speed_zone=kw["speed_zone"])
        rec.save_steps_csv(out / f"steps_{name}.csv")
        tail = rec.n_steps * rec.dt
        summary[name] = {
            "return": rec.episode_return(),
            "exit_throughput_after": exit_throughput(
                rec, t1, min(tail, t1 + args.duration)),
        }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="headwayctl",
        description="merge-bottleneck simulation with headway control")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, seeds: bool = True) -> None:
        p.add_argument("--scenario", default="single",
                       help="preset (single|multi|desk) or YAML path")
        p.add_argument("--out", default="out", help="output directory")
        if seeds:
            p.add_argument("--seeds", type=int, default=30,
                           help="number of seeds (0..n-1)")
            p.add_argument("--seed-list", default="",
                           help="comma-separated explicit seeds")

    p = sub.add_parser("simulate", help="run episodes, report speed change")
    common(p)
    p.add_argument("--controller", default="human",
                   help="human | fixed:<T> | policy:<ckpt.npz>")
    p.add_argument("--cav-fraction", type=float, default=None)
    p.add_argument("--save-episodes", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="evaluate fixed headway values")
    common(p)
    p.add_argument("--values", default="2.0,2.5,3.0,3.5,4.0")
    p.add_argument("--cav-fraction", type=float, default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("train", help="optimise a policy")
    common(p, seeds=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget-steps", type=int, default=60_000)
    p.add_argument("--batch-size", type=int, default=2000)
    p.add_argument("--learning-rate", type=float, default=5e-5)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--eval-seeds", type=int, default=0)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("timespace",
                       help="per-segment speed/density/flow grids")
    common(p, seeds=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--controller", default="human")
    p.set_defaults(func=_cmd_timespace)

    p = sub.add_parser("zone",
                       help="compare a timed headway zone to a speed limit")
    common(p, seeds=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--headway", type=float, default=3.0)
    p.add_argument("--speed-limit", type=float, default=25.0)
    p.add_argument("--zone-start", type=float, default=800.0)
    p.add_argument("--zone-end", type=float, default=1000.0)
    p.add_argument("--start", type=float, default=200.0)
    p.add_argument("--duration", type=float, default=100.0)
    p.set_defaults(func=_cmd_zone)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CollisionError as exc:
        print(f"collision: {exc}", file=sys.stderr)
        return EXIT_COLLISION


if __name__ == "__main__":
    sys.exit(main())
