"""Confidence-augmented space-time A* over the explicit (cell, confidence, time) graph.

The confidence field assigns each (cell, t) its highest admissible ladder level;
cells with no admissible level are unreachable at that step. Edge weights
combine travel cost and a log-confidence bonus:

    w = (1 - gamma) * w_travel - gamma * log(c_next)
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .conformal import CalibrationSet, ConfidenceLadder, QuantileTable
from .envsim import Workspace
from .grid import PlanOutcome, PlanQuery, Trajectory, grid_distance, neighbors


@dataclass(frozen=True)
class ConfidenceField:
    """Per-(t, cell) snapped ladder level; NaN marks cells pruned below c_min."""

    levels: np.ndarray  # (n_steps, ny, nx), ladder level or NaN
    ladder: ConfidenceLadder
    workspace: Workspace

    @property
    def n_steps(self) -> int:
        return self.levels.shape[0]

    def level_at(self, cell: tuple[int, int], t: int) -> float | None:
        v = self.levels[t, cell[1], cell[0]]
        return None if math.isnan(v) else float(v)


def _cell_center_grid(workspace: Workspace) -> np.ndarray:
    """(ny, nx, 2) array of cell centers."""
    xs = (np.arange(workspace.n_cells_x) + 0.5) * workspace.grid_resolution
    ys = (np.arange(workspace.n_cells_y) + 0.5) * workspace.grid_resolution
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def min_obstacle_distance_grid(predicted_positions: np.ndarray, workspace: Workspace) -> np.ndarray:
    """(n_steps, ny, nx) distance from each cell center to the nearest prediction."""
    pred = np.asarray(predicted_positions, dtype=float)
    centers = _cell_center_grid(workspace)  # (ny, nx, 2)
    if pred.ndim != 3:
        raise ValueError("predicted_positions must be (n_steps, n_obstacles, 2)")
    if pred.shape[1] == 0:
        return np.full((pred.shape[0],) + centers.shape[:2], np.inf)
    # (n_steps, n_obs, 1, 1, 2) vs (1, 1, ny, nx, 2)
    diff = pred[:, :, None, None, :] - centers[None, None, :, :, :]
    return np.linalg.norm(diff, axis=-1).min(axis=1)


def build_confidence_field(
    source: QuantileTable | CalibrationSet,
    predicted_positions: np.ndarray,
    workspace: Workspace,
    ladder: ConfidenceLadder,
    n_steps: int | None = None,
) -> ConfidenceField:
    """Snap each (cell, t) to its highest admissible ladder level.

    From a QuantileTable the predicate is the strict threshold clearance
    min_d > Q^c(t) (identical to the SIPP interval predicate, so both planners
    see the same traversable set). From a CalibrationSet it is the empirical
    confidence c(s, t) snapped down to the ladder.
    """
    pred = np.asarray(predicted_positions, dtype=float)
    if n_steps is None:
        n_steps = pred.shape[0]
    if pred.shape[0] < n_steps:
        raise ValueError(f"predictions cover {pred.shape[0]} steps, need {n_steps}")
    ny, nx = workspace.n_cells_y, workspace.n_cells_x
    dmin = min_obstacle_distance_grid(pred[:n_steps], workspace)

    levels = np.full((n_steps, ny, nx), np.nan)
    if isinstance(source, QuantileTable):
        if source.horizon_steps < n_steps:
            raise ValueError("quantile table does not cover the planning horizon")
        for c in ladder.levels:  # decreasing: first hit is the highest level
            row = source.row(c)[:n_steps]
            safe = dmin > row[:, None, None]
            assign = safe & np.isnan(levels)
            levels[assign] = c
    elif isinstance(source, CalibrationSet):
        if source.horizon_steps < n_steps:
            raise ValueError("calibration set does not cover the planning horizon")
        # empirical confidence = fraction of scores <= d_min, vectorized per step
        scores = np.sort(source.scores, axis=0)  # (n_ep, steps)
        n_ep = source.n_episodes
        for t in range(n_steps):
            conf = np.searchsorted(scores[:, t], dmin[t].ravel(), side="right") / n_ep
            for lvl_i, c in enumerate(ladder.levels):
                pick = (conf >= c - 1e-12) & np.isnan(levels[t].ravel())
                flat = levels[t].ravel()
                flat[pick] = c
                levels[t] = flat.reshape(ny, nx)
    else:
        raise TypeError("source must be a QuantileTable or CalibrationSet")

    # statically blocked cells are never traversable
    for cx, cy in workspace.static_blocked_cells:
        levels[:, cy, cx] = np.nan
    return ConfidenceField(levels=levels, ladder=ladder, workspace=workspace)


def edge_weight(w_travel: float, c_next: float, gamma: float) -> float:
    if not (0.0 < c_next <= 1.0):
        raise ValueError("c_next must lie in (0, 1]; zero-confidence edges are pruned")
    return (1.0 - gamma) * w_travel - gamma * math.log(c_next)


def plan_spacetime(query: PlanQuery, field: ConfidenceField) -> PlanOutcome:
    """A* over (cell, t); arrival-time optimal at gamma=0 with confidence tie-breaks.

    Cost is lexicographic: the gamma-weighted edge sum first, then the
    accumulated -log(confidence), so equal-cost paths prefer higher confidence.
    """
    ws = field.workspace
    T = min(query.T_steps, field.n_steps)
    gamma = query.gamma

    start_level = field.level_at(query.start, 0)
    if start_level is None:
        return PlanOutcome(None, "start below c_min at t=0")
    if query.goal in ws.static_blocked_cells:
        return PlanOutcome(None, "goal statically blocked")

    def h(cell):
        return (1.0 - gamma) * grid_distance(cell, query.goal, query.motion_model)

    # primary g, secondary sum(-log c), tiebreak (t, cell index)
    start_g2 = -math.log(start_level) if start_level > 0 else math.inf
    if start_level <= 0:
        return PlanOutcome(None, "start has zero confidence at t=0")
    open_heap = [(h(query.start), start_g2, 0, ws.cell_index(query.start), 0.0, query.start, 0)]
    best: dict[tuple[tuple[int, int], int], tuple[float, float]] = {
        (query.start, 0): (0.0, start_g2)
    }
    parents: dict[tuple[tuple[int, int], int], tuple[tuple[int, int], int] | None] = {
        (query.start, 0): None
    }

    goal_key = None
    while open_heap:
        f1, g2, t, _, g1, cell, _pad = heapq.heappop(open_heap)
        key = (cell, t)
        if (g1, g2) > best.get(key, (math.inf, math.inf)):
            continue
        if cell == query.goal:
            goal_key = key
            break
        if t + 1 >= T:
            continue
        succ = neighbors(cell, ws, query.motion_model)
        if query.allow_wait:
            succ = succ + [(cell, 1.0)]
        for ncell, w_travel in succ:
            c_next = field.level_at(ncell, t + 1)
            if c_next is None or c_next <= 0.0:
                continue
            ng1 = g1 + edge_weight(w_travel, c_next, gamma)
            ng2 = g2 - math.log(c_next)
            nkey = (ncell, t + 1)
            if (ng1, ng2) < best.get(nkey, (math.inf, math.inf)):
                best[nkey] = (ng1, ng2)
                parents[nkey] = key
                heapq.heappush(
                    open_heap,
                    (ng1 + h(ncell), ng2, t + 1, ws.cell_index(ncell), ng1, ncell, 0),
                )

    if goal_key is None:
        return PlanOutcome(None, "no feasible path within the horizon")

    # reconstruct
    chain = []
    k = goal_key
    while k is not None:
        chain.append(k)
        k = parents[k]
    chain.reverse()
    waypoints = tuple((cell, t, field.level_at(cell, t)) for cell, t in chain)
    g1, _ = best[goal_key]
    return PlanOutcome(
        Trajectory(
            waypoints=waypoints,
            total_time=goal_key[1],
            min_confidence=min(c for _, _, c in waypoints),
            cost=g1,
        )
    )
