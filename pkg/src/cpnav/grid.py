"""Shared grid-planning types: queries, motion models, trajectories."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .envsim import Workspace

MOTION_MODELS = ("4-connected", "8-connected")

_CARDINAL = ((1, 0), (-1, 0), (0, 1), (0, -1))
_DIAGONAL = ((1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class PlanQuery:
    start: tuple[int, int]
    goal: tuple[int, int]
    gamma: float = 0.0
    c_min: float = 0.0
    T_steps: int = 0  # number of time indices; states live at t in [0, T_steps)
    motion_model: str = "4-connected"
    allow_wait: bool = True

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must lie in [0, 1]")
        if self.motion_model not in MOTION_MODELS:
            raise ValueError(f"motion_model must be one of {MOTION_MODELS}")
        if self.T_steps < 1:
            raise ValueError("T_steps must be >= 1")


@dataclass(frozen=True)
class Trajectory:
    """Planned path: one waypoint per occupied step, waits included."""

    waypoints: tuple[tuple[tuple[int, int], int, float], ...]  # (cell, t, confidence)
    total_time: int
    min_confidence: float
    cost: float

    def times(self) -> list[int]:
        return [t for _, t, _ in self.waypoints]

    def confidences(self) -> list[float]:
        return [c for _, _, c in self.waypoints]


@dataclass(frozen=True)
class PlanOutcome:
    trajectory: Trajectory | None
    reason: str = ""

    @property
    def feasible(self) -> bool:
        return self.trajectory is not None


def neighbors(cell: tuple[int, int], workspace: Workspace, motion_model: str):
    """(neighbor, travel_cost) pairs; diagonal cost sqrt(2), time always 1 step."""
    nx, ny = workspace.n_cells_x, workspace.n_cells_y
    blocked = workspace.static_blocked_cells
    moves = _CARDINAL if motion_model == "4-connected" else _CARDINAL + _DIAGONAL
    out = []
    for dx, dy in moves:
        c = (cell[0] + dx, cell[1] + dy)
        if 0 <= c[0] < nx and 0 <= c[1] < ny and c not in blocked:
            out.append((c, math.sqrt(2.0) if dx and dy else 1.0))
    return out


def grid_distance(a: tuple[int, int], b: tuple[int, int], motion_model: str) -> int:
    """Admissible remaining-time estimate in steps (unit time per move)."""
    dx, dy = abs(a[0] - b[0]), abs(a[1] - b[1])
    return dx + dy if motion_model == "4-connected" else max(dx, dy)


def export_trajectory_csv(traj: Trajectory, workspace: Workspace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["t", "x", "y", "confidence"])
        for cell, t, c in traj.waypoints:
            x, y = workspace.cell_center(cell)
            w.writerow([t, repr(float(x)), repr(float(y)), repr(float(c))])
