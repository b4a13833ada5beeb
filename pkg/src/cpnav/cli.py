"""Command-line entry point.

Subcommands: calibrate, plan, run, sweep, verify, plot.
Exit codes: 0 success, 2 config error, 3 infeasible-but-reported outcome.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .conformal import ConfidenceLadder, build_quantile_table, export_quantile_table_csv
from .envsim import ScenarioError, export_trajectories_csv, load_scenario, simulate_truth
from .experiment import (
    ExperimentSpec,
    SpecError,
    calibration_scores,
    default_output_dir,
    load_spec,
    run_experiment,
)
from .plots import PLOT_KINDS, PlotDataError, emit_plot
from .verify import ALL_CHECKS, run_checks


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpnav", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="collect calibration scores and write a quantile table")
    cal.add_argument("scenario", help="scenario YAML file")
    cal.add_argument("--episodes", type=int, default=200)
    cal.add_argument("--noise-sigma", type=float, default=0.3)
    cal.add_argument("--levels", type=float, nargs="+", default=[0.95, 0.9, 0.8])
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--out", default=None, help="output directory")

    plan = sub.add_parser("plan", help="one global plan (spacetime or cp_sipp)")
    plan.add_argument("experiment", help="experiment spec YAML")
    plan.add_argument("--out", default=None)

    run = sub.add_parser("run", help="run an experiment spec end to end")
    run.add_argument("experiment", help="experiment spec YAML")
    run.add_argument("--out", default=None)
    run.add_argument("--jobs", type=int, default=1)

    sweep = sub.add_parser("sweep", help="run an experiment spec with many trials")
    sweep.add_argument("experiment")
    sweep.add_argument("--trials", type=int, default=None, help="override test_trials")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--out", default=None)

    ver = sub.add_parser("verify", help="run named acceptance checks")
    ver.add_argument("names", nargs="*", help=f"checks to run (default all): {sorted(ALL_CHECKS)}")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--out", default=None)

    plot = sub.add_parser("plot", help="emit an SVG plot from a data artifact")
    plot.add_argument("--kind", required=True, choices=PLOT_KINDS)
    plot.add_argument("--data", required=True)
    plot.add_argument("--out", required=True)

    return p


def _out_dir(arg: str | None) -> Path:
    d = Path(arg if arg is not None else default_output_dir())
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_calibrate(args) -> int:
    scenario = load_scenario(args.scenario)
    out = _out_dir(args.out)
    spec = ExperimentSpec(
        scenario=scenario,
        planner="cp_sipp",
        calibration_episodes=args.episodes,
        ladder_levels=tuple(args.levels),
        c_min=min(args.levels),
        noise_sigma=args.noise_sigma,
        seed=args.seed,
        output_dir=str(out),
    )
    cal = calibration_scores(spec)
    table = build_quantile_table(cal, ConfidenceLadder(tuple(args.levels), c_min=min(args.levels)))
    export_quantile_table_csv(table, out / "quantile_table.csv")
    export_trajectories_csv(simulate_truth(scenario), out / "truth.csv")
    print(f"wrote {out / 'quantile_table.csv'} ({cal.n_episodes} episodes, "
          f"{cal.horizon_steps} steps)")
    return 0


def _run_spec(args, trials_override: int | None = None, jobs: int = 1) -> int:
    spec = load_spec(args.experiment)
    if args.out is not None:
        spec.output_dir = args.out
    if trials_override is not None:
        spec.test_trials = trials_override
    report = run_experiment(spec, jobs=jobs)
    print(report.to_text())
    infeasible = any(n.startswith("infeasible") for n in report.notes)
    return 3 if infeasible else 0


def cmd_plan(args) -> int:
    return _run_spec(args)


def cmd_run(args) -> int:
    return _run_spec(args, jobs=args.jobs)


def cmd_sweep(args) -> int:
    return _run_spec(args, trials_override=args.trials, jobs=args.jobs)


def cmd_verify(args) -> int:
    results = run_checks(args.names or None, master_seed=args.seed)
    out = _out_dir(args.out)
    payload = [
        {"name": r.name, "passed": r.passed, "details": r.details, "seconds": round(r.seconds, 2)}
        for r in results
    ]
    (out / "verify_report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_plot(args) -> int:
    emit_plot(args.kind, args.data, args.out)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "calibrate": cmd_calibrate,
        "plan": cmd_plan,
        "run": cmd_run,
        "sweep": cmd_sweep,
        "verify": cmd_verify,
        "plot": cmd_plot,
    }
    try:
        return handlers[args.command](args)
    except (SpecError, ScenarioError, PlotDataError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
