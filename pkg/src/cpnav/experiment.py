"""Experiment orchestration: calibrate -> plan/run -> evaluate -> report.

An ExperimentSpec is a YAML mapping; every field has a materialized default so
written artifacts are self-describing. Trials are seeded deterministically
from the master seed and trial index, so sweeps aggregate identically no
matter the execution order.
"""

from __future__ import annotations

import concurrent.futures
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acp import AcpController, AcpState, GateConfig
from .conformal import (
    CalibrationSet,
    ConfidenceLadder,
    build_quantile_table,
    export_quantile_table_csv,
)
from .envsim import ObstacleTrajectory, Predictor, Scenario, load_scenario, scenario_from_dict
from .grid import PlanQuery, export_trajectory_csv
from .metrics import AggregateReport, TrialResult, aggregate, evaluate_trajectory
from .rrt import RrtConfig, RunSetup, receding_horizon_run
from .sipp import build_timeline, plan_sipp
from .spacetime import build_confidence_field, plan_spacetime

PLANNERS = ("spacetime", "cp_sipp", "acp_rrt", "rrt_baseline")


class SpecError(ValueError):
    """Experiment spec violates the schema; message names the field."""


@dataclass
class ExperimentSpec:
    scenario: Scenario
    planner: str
    calibration_episodes: int = 100
    test_trials: int = 100
    ladder_levels: tuple[float, ...] = (0.95, 0.9, 0.8)
    c_min: float = 0.8
    gamma: float = 0.0
    noise_sigma: float = 0.3
    start: tuple = (0, 0)
    goal: tuple = (0, 0)
    motion_model: str = "4-connected"
    robot_radius: float = 0.0
    seed: int = 0
    output_dir: str = "out"
    rrt: dict = field(default_factory=dict)
    gate: dict = field(default_factory=dict)
    acp: dict = field(default_factory=dict)
    deployment_noise_sigma: float | None = None

    def __post_init__(self):
        if self.planner not in PLANNERS:
            raise SpecError(f"planner: must be one of {PLANNERS}, got {self.planner!r}")
        if self.calibration_episodes < 1:
            raise SpecError("calibration_episodes: must be >= 1")
        if self.test_trials < 1:
            raise SpecError("test_trials: must be >= 1")


def spec_from_dict(d: dict, base_dir: Path | None = None) -> ExperimentSpec:
    d = dict(d)
    if "scenario_path" in d:
        path = Path(d.pop("scenario_path"))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        scenario = load_scenario(path)
    elif "scenario" in d:
        scenario = scenario_from_dict(d.pop("scenario"))
    else:
        raise SpecError("scenario: provide scenario or scenario_path")
    d.pop("scenario_path", None)
    if "ladder_levels" in d:
        d["ladder_levels"] = tuple(float(c) for c in d["ladder_levels"])
    for key in ("start", "goal"):
        if key in d:
            d[key] = tuple(d[key])
    try:
        return ExperimentSpec(scenario=scenario, **d)
    except TypeError as exc:
        raise SpecError(str(exc)) from exc


def load_spec(path) -> ExperimentSpec:
    import yaml

    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise SpecError(f"{path}: experiment spec must be a mapping")
    return spec_from_dict(data, base_dir=Path(path).resolve().parent)


# ------------------------------------------------------------------ pipeline

def _negative_history(scenario: Scenario, i: int) -> ObstacleTrajectory:
    dt = scenario.dt
    times = (-2.0 * dt, -1.0 * dt)
    spec = scenario.obstacles[i]
    pos = np.stack([spec.position(t) for t in times])
    return ObstacleTrajectory(i, times, pos, radius=spec.radius)


def calibration_scores(spec: ExperimentSpec) -> CalibrationSet:
    """Score episodes from the oracle-with-noise predictor on the scenario."""
    from .envsim import predict, simulate_truth

    scenario = spec.scenario
    truth = simulate_truth(scenario)
    if not truth:
        raise SpecError("scenario: calibration needs at least one obstacle")
    predictor = Predictor("oracle_with_noise", noise_sigma=spec.noise_sigma, lookback=2)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    scores = np.empty((spec.calibration_episodes, scenario.n_steps))
    histories = [_negative_history(scenario, i) for i in range(len(truth))]
    for j in range(spec.calibration_episodes):
        errs = []
        for i, tr in enumerate(truth):
            pred = predict(predictor, histories[i], scenario.n_steps, scenario.dt,
                           rng=rng, truth=tr)
            true_pos = np.stack([tr.position_at(t) for t in pred.times])
            errs.append(np.linalg.norm(pred.positions - true_pos, axis=1))
        scores[j] = np.max(errs, axis=0)
    return CalibrationSet(scores)


def _perturbed_truth(scenario: Scenario, sigma: float, rng) -> list[ObstacleTrajectory]:
    """A fresh evaluation episode: nominal motion plus i.i.d. positional noise."""
    from .envsim import simulate_truth

    out = []
    for tr in simulate_truth(scenario):
        noisy = tr.positions + rng.normal(0.0, sigma, size=tr.positions.shape)
        out.append(ObstacleTrajectory(tr.obstacle_id, tr.times, noisy, radius=tr.radius))
    return out


def run_experiment(spec: ExperimentSpec, jobs: int = 1, write_artifacts: bool = True) -> AggregateReport:
    out_dir = Path(spec.output_dir)
    if write_artifacts:
        out_dir.mkdir(parents=True, exist_ok=True)

    if spec.planner in ("spacetime", "cp_sipp"):
        report, artifacts = _run_global_planner(spec)
    else:
        report, artifacts = _run_rrt(spec, jobs=jobs)

    if write_artifacts:
        (out_dir / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        (out_dir / "report.txt").write_text(report.to_text() + "\n", encoding="utf-8")
        (out_dir / "spec.json").write_text(
            json.dumps(_spec_manifest(spec), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        for name, writer in artifacts.items():
            writer(out_dir / name)
    return report


def _spec_manifest(spec: ExperimentSpec) -> dict:
    return {
        "planner": spec.planner,
        "calibration_episodes": spec.calibration_episodes,
        "test_trials": spec.test_trials,
        "ladder_levels": list(spec.ladder_levels),
        "c_min": spec.c_min,
        "gamma": spec.gamma,
        "noise_sigma": spec.noise_sigma,
        "deployment_noise_sigma": spec.deployment_noise_sigma,
        "start": list(spec.start),
        "goal": list(spec.goal),
        "motion_model": spec.motion_model,
        "robot_radius": spec.robot_radius,
        "seed": spec.seed,
        "rrt": spec.rrt,
        "gate": spec.gate,
        "acp": spec.acp,
    }


def _run_global_planner(spec: ExperimentSpec):
    from .envsim import simulate_truth

    scenario = spec.scenario
    ladder = ConfidenceLadder(spec.ladder_levels, c_min=spec.c_min)
    cal = calibration_scores(spec) if scenario.obstacles else CalibrationSet(
        np.zeros((max(spec.calibration_episodes, 1), scenario.n_steps))
    )
    table = build_quantile_table(cal, ladder)
    truth = simulate_truth(scenario)
    if truth:
        predicted = np.stack(
            [[tr.positions[t] for tr in truth] for t in range(scenario.n_steps)]
        )
    else:
        predicted = np.empty((scenario.n_steps, 0, 2))

    query = PlanQuery(
        start=tuple(int(v) for v in spec.start),
        goal=tuple(int(v) for v in spec.goal),
        gamma=spec.gamma,
        c_min=spec.c_min,
        T_steps=scenario.n_steps,
        motion_model=spec.motion_model,
    )
    if spec.planner == "spacetime":
        field_ = build_confidence_field(table, predicted, scenario.workspace, ladder)
        outcome = plan_spacetime(query, field_)
    else:
        timeline = build_timeline(table, predicted, scenario.workspace, ladder, query.T_steps)
        outcome = plan_sipp(query, timeline)

    artifacts = {"quantile_table.csv": lambda p: export_quantile_table_csv(table, p)}
    if not outcome.feasible:
        report = AggregateReport(
            n_trials=0, collision_rate=0.0, collision_rate_halfwidth=0.0, goal_rate=0.0,
            mean_arrival_time=None, theorem1_bound=0.0, mean_miscoverage=None,
            notes=(f"infeasible: {outcome.reason}",),
        )
        return report, artifacts

    traj = outcome.trajectory
    artifacts["trajectory.csv"] = lambda p: export_trajectory_csv(traj, scenario.workspace, p)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 2]))
    trials = []
    for j in range(spec.test_trials):
        ep_truth = (
            _perturbed_truth(scenario, spec.noise_sigma, rng) if scenario.obstacles else []
        )
        if ep_truth:
            result = evaluate_trajectory(
                traj, ep_truth, scenario.workspace, spec.robot_radius, scenario.dt, trial_id=j
            )
        else:
            result = TrialResult(j, True, False, arrival_time=float(traj.total_time * scenario.dt),
                                 risk_bound=0.0)
        trials.append(result)
    return aggregate(trials), artifacts


def _rrt_trial(spec: ExperimentSpec, trial: int) -> tuple[TrialResult, object]:
    scenario = spec.scenario
    ladder = ConfidenceLadder(spec.ladder_levels, c_min=spec.c_min)
    cal = calibration_scores(spec)
    table = build_quantile_table(cal, ladder)
    seed = int(np.random.SeedSequence([spec.seed, 3, trial]).generate_state(1)[0])

    rrt_kwargs = dict(spec.rrt)
    rrt_kwargs.setdefault("goal_center", tuple(float(v) for v in spec.goal))
    rrt_kwargs["rng_seed"] = seed
    if "goal_center" in rrt_kwargs:
        rrt_kwargs["goal_center"] = tuple(rrt_kwargs["goal_center"])
    cfg = RrtConfig(robot_radius=spec.robot_radius, **rrt_kwargs)
    gate = GateConfig(rng_seed=seed, **spec.gate)
    acp_enabled = spec.planner == "acp_rrt"
    controller = AcpController(
        cal_scores=cal.scores[0],
        gate_cfg=gate,
        acp_state=AcpState(**({"lam": 1.0} | spec.acp)),
        enabled=acp_enabled,
    )
    sigma_dep = (
        spec.deployment_noise_sigma if spec.deployment_noise_sigma is not None else spec.noise_sigma
    )
    predictor = Predictor("oracle_with_noise", noise_sigma=sigma_dep, lookback=2)
    setup = RunSetup(
        start=tuple(float(v) for v in spec.start),
        base_quantiles=table,
        ladder=ladder,
        robot_radius=spec.robot_radius,
        acp_enabled=acp_enabled,
        predictor_seed=seed,
    )
    log = receding_horizon_run(scenario, cfg, controller, predictor, setup)
    es = [r.e_t for r in log.records if r.e_t is not None]
    result = TrialResult(
        trial_id=trial,
        reached_goal=log.reached_goal,
        collided=log.collided,
        collision_times=(log.collision_time,) if log.collided else (),
        arrival_time=log.final_time if log.reached_goal else None,
        risk_bound=float(sum(1.0 - c for confs in log.path_confidences[:1] for c in confs)),
        mean_miscoverage=float(np.mean(es)) if es else None,
    )
    return result, log


def _run_rrt(spec: ExperimentSpec, jobs: int = 1):
    trials = []
    first_log = None
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_rrt_trial, spec, j): j for j in range(spec.test_trials)}
            by_id = {}
            for fut in concurrent.futures.as_completed(futures):
                result, log = fut.result()
                by_id[result.trial_id] = (result, log)
        for j in range(spec.test_trials):
            result, log = by_id[j]
            trials.append(result)
            if j == 0:
                first_log = log
    else:
        for j in range(spec.test_trials):
            result, log = _rrt_trial(spec, j)
            trials.append(result)
            if j == 0:
                first_log = log
    artifacts = {}
    if first_log is not None:
        artifacts["run_trial0.jsonl"] = first_log.write_jsonl
        artifacts["acp_trace_trial0.csv"] = lambda p: _write_acp_trace(first_log, p)
    return aggregate(trials), artifacts


def _write_acp_trace(log, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["t", "R_t", "d_min", "lambda", "e_t"])
        for r in log.records:
            w.writerow([
                repr(round(r.t, 9)), "", repr(round(r.min_obstacle_dist, 9)),
                repr(round(r.lam, 9)), "" if r.e_t is None else r.e_t,
            ])


def default_output_dir() -> str:
    return os.environ.get("CPNAV_OUTPUT_DIR", "out")


# ------------------------------------------------------------- determinism

def determinism_report(master_seed: int = 0) -> bytes:
    """A small end-to-end cp_sipp pipeline rendered to bytes, for criterion 8."""
    from .verify import corridor_scenario  # local import to avoid a cycle

    scenario, query = corridor_scenario()
    spec = ExperimentSpec(
        scenario=scenario,
        planner="cp_sipp",
        calibration_episodes=40,
        test_trials=50,
        ladder_levels=(0.95,),
        c_min=0.95,
        noise_sigma=0.3,
        start=list(query.start),
        goal=list(query.goal),
        seed=master_seed,
        output_dir="unused",
    )
    report = run_experiment(spec, write_artifacts=False)
    return report.to_json().encode("utf-8")
