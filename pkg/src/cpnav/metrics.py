"""Ground-truth evaluation: collision outcomes, coverage curves, aggregation.

Evaluation reads only ground truth; planner-internal confidence never counts
as a safety verdict. All confidence intervals use the 3-sigma normal
approximation half-width 3*sqrt(p(1-p)/n) so acceptance thresholds are
unambiguous.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .envsim import ObstacleTrajectory, Workspace, point_collides
from .grid import Trajectory
from .sipp import trajectory_risk_bound


def binomial_halfwidth(p_hat: float, n: int) -> float:
    return 3.0 * math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n)


@dataclass(frozen=True)
class TrialResult:
    trial_id: int
    reached_goal: bool
    collided: bool
    collision_times: tuple[float, ...] = ()
    arrival_time: float | None = None
    risk_bound: float = 0.0
    mean_miscoverage: float | None = None

    def __post_init__(self):
        if self.collided != bool(self.collision_times):
            raise ValueError("collided must match collision_times nonemptiness")
        if self.reached_goal != (self.arrival_time is not None):
            raise ValueError("arrival_time must be present iff reached_goal")


@dataclass(frozen=True)
class AggregateReport:
    n_trials: int
    collision_rate: float
    collision_rate_halfwidth: float
    goal_rate: float
    mean_arrival_time: float | None
    theorem1_bound: float
    mean_miscoverage: float | None
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "collision_rate": self.collision_rate,
            "collision_rate_halfwidth": self.collision_rate_halfwidth,
            "goal_rate": self.goal_rate,
            "mean_arrival_time": self.mean_arrival_time,
            "theorem1_bound": self.theorem1_bound,
            "mean_miscoverage": self.mean_miscoverage,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        rows = [
            ("trials", str(self.n_trials)),
            ("collision rate", f"{self.collision_rate:.4f} +/- {self.collision_rate_halfwidth:.4f}"),
            ("goal rate", f"{self.goal_rate:.4f}"),
            ("mean arrival time", "n/a" if self.mean_arrival_time is None else f"{self.mean_arrival_time:.3f}"),
            ("theorem-1 bound", f"{self.theorem1_bound:.4f}"),
            ("mean miscoverage", "n/a" if self.mean_miscoverage is None else f"{self.mean_miscoverage:.4f}"),
        ]
        width = max(len(k) for k, _ in rows)
        lines = [f"{k.ljust(width)}  {v}" for k, v in rows]
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


def evaluate_trajectory(
    traj: Trajectory,
    truth: Sequence[ObstacleTrajectory],
    workspace: Workspace,
    robot_radius: float = 0.0,
    dt: float = 1.0,
    trial_id: int = 0,
    reached_goal: bool = True,
) -> TrialResult:
    """Per-step ground-truth collision check of a planned grid trajectory."""
    if not traj.waypoints:
        raise ValueError("trajectory has no waypoints")
    collision_times = []
    for cell, t, _c in traj.waypoints:
        t_real = t * dt
        for obs in truth:
            if not (obs.t_min - 1e-9 <= t_real <= obs.t_max + 1e-9):
                raise ValueError(f"waypoint time {t_real} outside truth span")
        if point_collides(workspace.cell_center(cell), t_real, truth, robot_radius):
            collision_times.append(t_real)
    return TrialResult(
        trial_id=trial_id,
        reached_goal=reached_goal,
        collided=bool(collision_times),
        collision_times=tuple(collision_times),
        arrival_time=float(traj.total_time * dt) if reached_goal else None,
        risk_bound=trajectory_risk_bound(traj),
    )


def coverage_curve(
    test_scores: np.ndarray, thresholds: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step empirical coverage P(R(t) <= C_t) with 3-sigma halfwidths.

    test_scores: (n_episodes, n_steps); thresholds: (n_steps,).
    """
    scores = np.asarray(test_scores, dtype=float)
    th = np.asarray(thresholds, dtype=float)
    if scores.ndim != 2 or scores.shape[1] != th.shape[0]:
        raise ValueError("test_scores and thresholds disagree on horizon length")
    cov = np.mean(scores <= th[None, :], axis=0)
    half = 3.0 * np.sqrt(cov * (1.0 - cov) / scores.shape[0])
    return cov, half


def aggregate(trials: Sequence[TrialResult]) -> AggregateReport:
    if not trials:
        raise ValueError("need at least one trial")
    # order-independent by construction: means and rates only
    n = len(trials)
    collision_rate = sum(t.collided for t in trials) / n
    goal_rate = sum(t.reached_goal for t in trials) / n
    arrivals = [t.arrival_time for t in trials if t.arrival_time is not None]
    miscov = [t.mean_miscoverage for t in trials if t.mean_miscoverage is not None]
    notes = []
    if collision_rate == 0.0:
        notes.append(f"zero observed collisions; rule-of-three upper bound {3.0 / n:.4g}")
    return AggregateReport(
        n_trials=n,
        collision_rate=collision_rate,
        collision_rate_halfwidth=binomial_halfwidth(collision_rate, n),
        goal_rate=goal_rate,
        mean_arrival_time=float(np.mean(arrivals)) if arrivals else None,
        theorem1_bound=float(np.mean([t.risk_bound for t in trials])),
        mean_miscoverage=float(np.mean(miscov)) if miscov else None,
        notes=tuple(notes),
    )
