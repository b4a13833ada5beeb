"""Deterministic planar simulation: workspace, dynamic obstacles, predictors.

Everything downstream (calibration, planners, metrics) consumes the discrete
step grid produced here; obstacle motion is continuous in principle but is
only ever evaluated at multiples of dt, with linear interpolation in between.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ScenarioError(ValueError):
    """A scenario spec is internally inconsistent or leaves the workspace."""


@dataclass(frozen=True)
class Workspace:
    width: float
    height: float
    grid_resolution: float = 1.0
    static_blocked_cells: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("workspace dimensions must be positive")
        if self.grid_resolution <= 0:
            raise ValueError("grid_resolution must be positive")
        for cx, cy in self.static_blocked_cells:
            if not (0 <= cx < self.n_cells_x and 0 <= cy < self.n_cells_y):
                raise ValueError(f"blocked cell {(cx, cy)} outside workspace grid")

    @property
    def n_cells_x(self) -> int:
        return int(round(self.width / self.grid_resolution))

    @property
    def n_cells_y(self) -> int:
        return int(round(self.height / self.grid_resolution))

    def cell_center(self, cell: tuple[int, int]) -> np.ndarray:
        return (np.asarray(cell, dtype=float) + 0.5) * self.grid_resolution

    def contains_point(self, p) -> bool:
        x, y = float(p[0]), float(p[1])
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height

    def cell_index(self, cell: tuple[int, int]) -> int:
        """Flat index used for deterministic tie-breaking."""
        return cell[1] * self.n_cells_x + cell[0]

    def point_blocked(self, p) -> bool:
        """True when the point falls inside a statically blocked cell."""
        if not self.static_blocked_cells:
            return False
        cx = int(float(p[0]) / self.grid_resolution)
        cy = int(float(p[1]) / self.grid_resolution)
        cx = min(max(cx, 0), self.n_cells_x - 1)
        cy = min(max(cy, 0), self.n_cells_y - 1)
        return (cx, cy) in self.static_blocked_cells


@dataclass(frozen=True)
class ObstacleTrajectory:
    obstacle_id: int
    times: tuple[float, ...]
    positions: np.ndarray  # (n_samples, 2)
    radius: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if len(t) < 2:
            raise ValueError("trajectory needs at least 2 samples")
        if not np.all(np.diff(t) > 0):
            raise ValueError("sample times must be strictly increasing")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (len(t), 2):
            raise ValueError("positions must be (n_samples, 2)")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "times", tuple(t.tolist()))
        object.__setattr__(self, "_times_arr", np.asarray(self.times))
        # scalar tuples for the hot interpolation path in edge checking
        object.__setattr__(
            self, "_pos_list", [(float(x), float(y)) for x, y in pos]
        )

    @property
    def t_min(self) -> float:
        return self.times[0]

    @property
    def t_max(self) -> float:
        return self.times[-1]

    def position_at(self, t: float) -> np.ndarray:
        """Linear interpolation; exact stored sample at sample times."""
        times = self._times_arr
        if t < self.t_min - 1e-9 or t > self.t_max + 1e-9:
            raise ValueError(f"t={t} outside trajectory span [{self.t_min}, {self.t_max}]")
        idx = np.searchsorted(times, t)
        if idx < len(times) and abs(times[idx] - t) < 1e-9:
            return self.positions[idx].copy()
        if idx > 0 and abs(times[idx - 1] - t) < 1e-9:
            return self.positions[idx - 1].copy()
        idx = min(max(idx, 1), len(times) - 1)
        t0, t1 = times[idx - 1], times[idx]
        w = (t - t0) / (t1 - t0)
        return (1 - w) * self.positions[idx - 1] + w * self.positions[idx]


# ---------------------------------------------------------------- motion specs

@dataclass(frozen=True)
class ConstantVelocityMotion:
    start: tuple[float, float]
    velocity: tuple[float, float]
    radius: float = 0.0

    def position(self, t: float, rng=None) -> np.ndarray:
        return np.asarray(self.start) + np.asarray(self.velocity) * t


@dataclass(frozen=True)
class SinusoidalMotion:
    """Drift plus sinusoidal oscillation: p(t) = start + v*t + A*sin(2*pi*t/period + phase)."""

    start: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    amplitude: tuple[float, float] = (1.0, 0.0)
    period: float = 4.0
    phase: float = 0.0
    radius: float = 0.0

    def position(self, t: float, rng=None) -> np.ndarray:
        osc = np.asarray(self.amplitude) * math.sin(2 * math.pi * t / self.period + self.phase)
        return np.asarray(self.start) + np.asarray(self.velocity) * t + osc


@dataclass(frozen=True)
class WaypointMotion:
    """Piecewise-linear motion through (time, position) waypoints."""

    times: tuple[float, ...]
    points: tuple[tuple[float, float], ...]
    radius: float = 0.0

    def position(self, t: float, rng=None) -> np.ndarray:
        times = np.asarray(self.times)
        pts = np.asarray(self.points, dtype=float)
        t = min(max(t, times[0]), times[-1])
        idx = int(np.searchsorted(times, t))
        if idx == 0:
            return pts[0].copy()
        idx = min(idx, len(times) - 1)
        t0, t1 = times[idx - 1], times[idx]
        w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        return (1 - w) * pts[idx - 1] + w * pts[idx]


MotionSpec = ConstantVelocityMotion | SinusoidalMotion | WaypointMotion


@dataclass(frozen=True)
class Scenario:
    workspace: Workspace
    obstacles: tuple[MotionSpec, ...]
    horizon_T: float
    dt: float
    rng_seed: int = 0

    def __post_init__(self):
        if self.horizon_T <= 0 or self.dt <= 0:
            raise ValueError("horizon_T and dt must be positive")
        steps = self.horizon_T / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("dt must divide horizon_T")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_T / self.dt))

    @property
    def step_times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


def simulate_truth(scenario: Scenario) -> list[ObstacleTrajectory]:
    """Sample every obstacle at each multiple of dt in [0, horizon_T].

    Obstacles leaving the workspace are a scenario error, never clipped.
    """
    times = scenario.step_times
    out = []
    for oid, spec in enumerate(scenario.obstacles):
        pos = np.stack([spec.position(t) for t in times])
        inside = (
            (pos[:, 0] >= 0) & (pos[:, 0] <= scenario.workspace.width)
            & (pos[:, 1] >= 0) & (pos[:, 1] <= scenario.workspace.height)
        )
        if not inside.all():
            bad = times[~inside][0]
            raise ScenarioError(
                f"obstacle {oid} leaves the workspace at t={bad:g} "
                f"(position {pos[~inside][0].tolist()})"
            )
        out.append(ObstacleTrajectory(oid, tuple(times.tolist()), pos, radius=spec.radius))
    return out


# ------------------------------------------------------------------ predictors

@dataclass(frozen=True)
class Predictor:
    kind: str  # constant_velocity | noisy_kinematic | oracle_with_noise
    noise_sigma: float = 0.0
    lookback: int = 2

    def __post_init__(self):
        if self.kind not in ("constant_velocity", "noisy_kinematic", "oracle_with_noise"):
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.lookback < 1:
            raise ValueError("lookback must be >= 1")


def predict(
    predictor: Predictor,
    history: ObstacleTrajectory,
    horizon_steps: int,
    dt: float,
    rng: np.random.Generator | None = None,
    truth: ObstacleTrajectory | None = None,
) -> ObstacleTrajectory:
    """Forecast `horizon_steps` future samples starting one dt after history.

    `truth` is required for the oracle_with_noise kind (it perturbs the real
    future rather than extrapolating).
    """
    if horizon_steps < 1:
        raise ValueError("horizon_steps must be >= 1")
    n_hist = len(history.times)
    if n_hist < predictor.lookback:
        raise ValueError(
            f"insufficient history: have {n_hist} samples, need {predictor.lookback}"
        )
    t_last = history.times[-1]
    future_times = t_last + dt * np.arange(1, horizon_steps + 1)

    if predictor.kind == "oracle_with_noise":
        if truth is None:
            raise ValueError("oracle_with_noise requires the ground-truth trajectory")
        base = np.stack([truth.position_at(t) for t in future_times])
    else:
        # constant-velocity extrapolation of the last observed step
        p_last = history.positions[-1]
        v = (history.positions[-1] - history.positions[-2]) / (
            history.times[-1] - history.times[-2]
        )
        base = p_last + np.outer(future_times - t_last, v)

    sigma = predictor.noise_sigma
    noisy = predictor.kind in ("noisy_kinematic", "oracle_with_noise") and sigma > 0
    if noisy:
        if rng is None:
            raise ValueError("a seeded rng is required when noise_sigma > 0")
        base = base + rng.normal(0.0, sigma, size=base.shape)

    return ObstacleTrajectory(
        history.obstacle_id, tuple(future_times.tolist()), base, radius=history.radius
    )


def point_collides(
    position,
    t: float,
    truth: Sequence[ObstacleTrajectory],
    robot_radius: float = 0.0,
) -> bool:
    """Ground-truth collision query; the one checker behind every safety metric."""
    p = np.asarray(position, dtype=float)
    for obs in truth:
        d = float(np.linalg.norm(p - obs.position_at(t)))
        if d <= robot_radius + obs.radius:
            return True
    return False


def positions_at_step(trajectories: Sequence[ObstacleTrajectory], step: int) -> np.ndarray:
    """(n_obstacles, 2) array of sample `step` from each trajectory."""
    return np.stack([traj.positions[step] for traj in trajectories])


# ------------------------------------------------------------------ file I/O

def export_trajectories_csv(trajectories: Sequence[ObstacleTrajectory], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["obstacle_id", "t", "x", "y"])
        for traj in trajectories:
            for t, (x, y) in zip(traj.times, traj.positions):
                w.writerow([traj.obstacle_id, repr(float(t)), repr(float(x)), repr(float(y))])


_MOTION_KINDS = {
    "constant_velocity": ConstantVelocityMotion,
    "sinusoidal": SinusoidalMotion,
    "waypoint": WaypointMotion,
}


def motion_spec_from_dict(d: dict) -> MotionSpec:
    d = dict(d)
    kind = d.pop("kind")
    if kind not in _MOTION_KINDS:
        raise ScenarioError(f"unknown obstacle motion kind {kind!r}")
    cls = _MOTION_KINDS[kind]
    try:
        if kind == "waypoint":
            d["times"] = tuple(float(t) for t in d["times"])
            d["points"] = tuple(tuple(p) for p in d["points"])
        else:
            for key in ("start", "velocity", "amplitude"):
                if key in d:
                    d[key] = tuple(float(v) for v in d[key])
        return cls(**d)
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"bad obstacle spec for kind {kind!r}: {exc}") from exc


def scenario_from_dict(d: dict) -> Scenario:
    try:
        ws = d["workspace"]
        blocked = frozenset(tuple(c) for c in ws.get("static_blocked_cells", []))
        workspace = Workspace(
            width=float(ws["width"]),
            height=float(ws["height"]),
            grid_resolution=float(ws.get("grid_resolution", 1.0)),
            static_blocked_cells=blocked,
        )
        obstacles = tuple(motion_spec_from_dict(o) for o in d.get("obstacles", []))
        return Scenario(
            workspace=workspace,
            obstacles=obstacles,
            horizon_T=float(d["horizon_T"]),
            dt=float(d.get("dt", 1.0)),
            rng_seed=int(d.get("rng_seed", 0)),
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario missing field: {exc}") from exc


def load_scenario(path) -> Scenario:
    import yaml

    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: scenario file must be a mapping")
    return scenario_from_dict(data)
