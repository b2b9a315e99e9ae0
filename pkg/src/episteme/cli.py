"""Command-line entry points: simulate, campaign, validate, replay."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import artifacts
from .artifacts import ConfigError, RunConfig
from .harness import MissionKind, Reasoning, generate_scenario, run_campaign, run_trial
from .world import Arena

EXIT_CONFIG = 2
EXIT_IO = 3


def _load(args: argparse.Namespace) -> RunConfig:
    cfg = artifacts.load_config(args.config)
    cfg = artifacts.seed_from_env(cfg)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "reasoning", None):
        cfg = replace(cfg, reasoning=args.reasoning)
    if getattr(args, "order", None) is not None:
        cfg = replace(cfg, order=args.order)
    if getattr(args, "trials", None) is not None:
        cfg = replace(cfg, trials=args.trials)
    if getattr(args, "parallelism", None) is not None:
        cfg = replace(cfg, parallelism=args.parallelism)
    if getattr(args, "scale", None):
        cfg = replace(cfg, scale=args.scale)
    return artifacts.config_from_dict(artifacts.config_to_dict(cfg))


def _outdir(args: argparse.Namespace, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    spec = cfg.spec()
    scenario = generate_scenario(spec, args.trial_index)
    record = run_trial(scenario, record=True)
    out = _outdir(args, cfg)
    artifacts.export_trajectory(record, out / "trajectory.jsonl", robot=args.robot)
    artifacts.export_belief_trace(record, out / "beliefs.jsonl")
    traj = artifacts.read_jsonl(out / "trajectory.jsonl")
    svg = artifacts.paths_svg(traj, [g.position for g in scenario.goals], spec.arena, radius=spec.convergence_radius)
    (out / "paths.svg").write_text(svg, encoding="utf-8")
    status = "converged" if record.converged else "not converged"
    print(f"{spec.mission.value} n={spec.n_robots} reasoning={spec.reasoning.value}: {status} "
          f"after {record.iterations_used} iterations; wrote {out}")
    return 0


def cmd_campaign(args: argparse.Namespace) -> int:
    cfg = _load(args)
    specs = cfg.campaign_specs()
    cells = run_campaign(specs, cfg.trials, cfg.parallelism)
    out = _outdir(args, cfg)
    (out / "results.csv").write_text(artifacts.results_csv(cells), encoding="utf-8", newline="")
    for mission in MissionKind:
        subset = [c for c in cells if c.spec.mission is mission]
        if not subset:
            continue
        metric = "mean_duplicates" if mission is MissionKind.MULTI_TASK else "success_rate"
        svg = artifacts.grouped_bars_svg(subset, metric, f"{mission.value}: {metric}")
        (out / f"{mission.value}.svg").write_text(svg, encoding="utf-8")
    for c in cells:
        print(f"{c.spec.mission.value:12s} n={c.spec.n_robots} goals={c.spec.n_goals} "
              f"{c.spec.reasoning.value:6s} success={c.success_rate:.2f} "
              f"[{c.ci_low:.2f}, {c.ci_high:.2f}] iters={c.mean_iters:.1f} dup={c.mean_duplicates:.2f}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    bad = 0
    for path in args.files:
        errors = artifacts.validate_file(path)
        if errors:
            bad += 1
            for e in errors:
                print(f"{path}: {e}")
        else:
            print(f"{path}: ok")
    return 1 if bad else 0


def cmd_replay(args: argparse.Namespace) -> int:
    traj = artifacts.read_jsonl(args.trajectory)
    goals, arena, radius = [], Arena(), 1.5
    if args.config:
        cfg = _load(args)
        spec = cfg.spec()
        goals = [g.position for g in generate_scenario(spec, args.trial_index).goals]
        arena, radius = spec.arena, spec.convergence_radius
    out = Path(args.out or Path(args.trajectory).with_suffix(".svg"))
    out.write_text(artifacts.paths_svg(traj, goals, arena, radius=radius), encoding="utf-8")
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="episteme", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        p.add_argument("--config", required=config_required, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="overrides config and $EPISTEME_SEED")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")

    p = sub.add_parser("simulate", help="run one trial and write traces and a path plot")
    common(p)
    p.add_argument("--reasoning", choices=[r.value for r in Reasoning])
    p.add_argument("--order", type=int, choices=range(4), default=None)
    p.add_argument("--trial-index", type=int, default=0)
    p.add_argument("--robot", type=int, default=0, help="robot whose posterior the trajectory carries")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("campaign", help="run a Monte Carlo grid and write results.csv")
    common(p)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--parallelism", type=int, default=None)
    p.add_argument("--scale", choices=["full", "smoke"], default=None)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("validate", help="check configs, traces and results files against their schemas")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("replay", help="re-render a path plot from a trajectory JSONL")
    p.add_argument("trajectory")
    common(p, config_required=False)
    p.add_argument("--trial-index", type=int, default=0)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
