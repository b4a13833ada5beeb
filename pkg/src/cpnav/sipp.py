"""CP-augmented Safe Interval Path Planning.

Safe intervals per (cell, confidence level) are the maximal runs of steps
where the cell center clears the conformal threshold at that level
(strict inequality: min_i d > Q^c(t)). The search runs A* over
(cell, level, interval) states with earliest-arrival-time g-values.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass

import numpy as np

from .conformal import ConfidenceLadder, QuantileTable
from .envsim import Workspace
from .grid import PlanOutcome, PlanQuery, Trajectory, grid_distance, neighbors


@dataclass(frozen=True, order=True)
class SafeInterval:
    t_start: int
    t_end: int  # half-open [t_start, t_end)

    def __post_init__(self):
        if self.t_start >= self.t_end:
            raise ValueError("interval must be nonempty")

    def contains(self, t: int) -> bool:
        return self.t_start <= t < self.t_end


def _runs_to_intervals(safe: np.ndarray) -> list[SafeInterval]:
    """Maximal contiguous True runs of a boolean step mask."""
    out = []
    start = None
    for t, ok in enumerate(safe):
        if ok and start is None:
            start = t
        elif not ok and start is not None:
            out.append(SafeInterval(start, t))
            start = None
    if start is not None:
        out.append(SafeInterval(start, len(safe)))
    return out


def compute_safe_intervals(
    cell: tuple[int, int],
    confidence: float,
    table: QuantileTable,
    predicted_positions: np.ndarray,
    T_steps: int,
    workspace: Workspace,
) -> list[SafeInterval]:
    if table.horizon_steps < T_steps:
        raise ValueError("quantile table does not cover T_steps")
    pred = np.asarray(predicted_positions, dtype=float)[:T_steps]
    center = workspace.cell_center(cell)
    if pred.shape[1] == 0:
        dmin = np.full(T_steps, np.inf)
    else:
        dmin = np.linalg.norm(pred - center, axis=-1).min(axis=1)
    thresholds = table.row(confidence)[:T_steps]
    return _runs_to_intervals(dmin > thresholds)


@dataclass(frozen=True)
class IntervalTimeline:
    """Safe intervals keyed by (cell, ladder level), plus the grid context."""

    intervals: dict[tuple[tuple[int, int], float], tuple[SafeInterval, ...]]
    ladder: ConfidenceLadder
    workspace: Workspace
    T_steps: int

    def at(self, cell: tuple[int, int], level: float) -> tuple[SafeInterval, ...]:
        return self.intervals.get((cell, level), ())


def build_timeline(
    table: QuantileTable,
    predicted_positions: np.ndarray,
    workspace: Workspace,
    ladder: ConfidenceLadder,
    T_steps: int,
) -> IntervalTimeline:
    pred = np.asarray(predicted_positions, dtype=float)
    intervals: dict[tuple[tuple[int, int], float], tuple[SafeInterval, ...]] = {}
    for cx in range(workspace.n_cells_x):
        for cy in range(workspace.n_cells_y):
            cell = (cx, cy)
            if cell in workspace.static_blocked_cells:
                continue
            for c in ladder.levels:
                ivs = compute_safe_intervals(cell, c, table, pred, T_steps, workspace)
                if ivs:
                    intervals[(cell, c)] = tuple(ivs)
    return IntervalTimeline(intervals, ladder, workspace, T_steps)


@dataclass(frozen=True)
class SippState:
    cell: tuple[int, int]
    confidence: float
    interval: SafeInterval
    g: int


def sipp_successors(
    state: SippState,
    timeline: IntervalTimeline,
    motion_model: str,
    c_min: float,
    allow_wait: bool = True,
) -> list[SippState]:
    """Earliest-arrival successors over all admissible neighbor confidence levels.

    Departure may be delayed (waiting in place) up to the end of the current
    interval; arrival must land inside the successor interval.
    """
    ws = timeline.workspace
    out = []
    w = 1  # unit time per move on the step grid
    latest_departure = state.interval.t_end - 1 if allow_wait else state.g
    for ncell, _cost in neighbors(state.cell, ws, motion_model):
        for c in timeline.ladder.levels:
            if c < c_min - 1e-12:
                continue
            for iv in timeline.at(ncell, c):
                arrival = max(state.g + w, iv.t_start)
                if arrival >= iv.t_end:
                    continue
                if arrival - w > latest_departure:
                    continue
                out.append(SippState(ncell, c, iv, arrival))
    return out


def plan_sipp(query: PlanQuery, timeline: IntervalTimeline) -> PlanOutcome:
    """A* minimizing arrival time; f-ties prefer higher confidence, then fixed order."""
    ws = timeline.workspace
    ladder = timeline.ladder
    if query.goal in ws.static_blocked_cells:
        return PlanOutcome(None, "goal statically blocked")

    open_heap: list = []
    best: dict[tuple[tuple[int, int], float, int], int] = {}
    parents: dict[tuple, tuple | None] = {}
    counter = 0

    def push(state: SippState, parent_key):
        nonlocal counter
        key = (state.cell, state.confidence, state.interval.t_start)
        if state.g >= best.get(key, math.inf):
            return
        best[key] = state.g
        parents[key] = parent_key
        f = state.g + grid_distance(state.cell, query.goal, query.motion_model)
        counter += 1
        heapq.heappush(
            open_heap,
            (f, -state.confidence, ws.cell_index(state.cell), state.interval.t_start, counter, state),
        )

    for c in ladder.levels:
        if c < query.c_min - 1e-12:
            continue
        for iv in timeline.at(query.start, c):
            if iv.contains(0):
                push(SippState(query.start, c, iv, 0), None)

    if not open_heap:
        return PlanOutcome(None, "start not inside any safe interval at t=0")

    goal_state = None
    expansions = 0
    while open_heap:
        _f, _negc, _ci, _ivs, _n, state = heapq.heappop(open_heap)
        key = (state.cell, state.confidence, state.interval.t_start)
        if state.g > best.get(key, math.inf):
            continue
        expansions += 1
        if state.cell == query.goal:
            goal_state = state
            break
        if state.g + 1 >= query.T_steps:
            continue
        for succ in sipp_successors(state, timeline, query.motion_model, query.c_min,
                                    allow_wait=query.allow_wait):
            if succ.g < query.T_steps:
                push(succ, key)

    if goal_state is None:
        return PlanOutcome(None, "no feasible path within the horizon",)

    # reconstruct the state chain, then expand to per-step waypoints with waits
    chain = []
    key = (goal_state.cell, goal_state.confidence, goal_state.interval.t_start)
    while key is not None:
        chain.append((key[0], key[1], best[key]))
        key = parents[key]
    chain.reverse()

    waypoints: list[tuple[tuple[int, int], int, float]] = []
    for i, (cell, conf, g) in enumerate(chain):
        t_next = chain[i + 1][2] if i + 1 < len(chain) else g + 1
        for t in range(g, t_next):
            waypoints.append((cell, t, conf))
    # the last entry added t=g only once; trim any accidental overshoot
    waypoints = [wp for wp in waypoints if wp[1] <= goal_state.g]

    traj = Trajectory(
        waypoints=tuple(waypoints),
        total_time=goal_state.g,
        min_confidence=min(c for _, _, c in waypoints),
        cost=float(goal_state.g),
    )
    return PlanOutcome(traj)


def count_expansions(query: PlanQuery, timeline: IntervalTimeline) -> int:
    """Number of A* expansions for the query (state-compression diagnostics)."""
    ws = timeline.workspace
    open_heap: list = []
    best: dict = {}
    counter = 0
    for c in timeline.ladder.levels:
        for iv in timeline.at(query.start, c):
            if iv.contains(0):
                key = (query.start, c, iv.t_start)
                best[key] = 0
                counter += 1
                heapq.heappush(open_heap, (grid_distance(query.start, query.goal, query.motion_model), counter, SippState(query.start, c, iv, 0)))
    expansions = 0
    while open_heap:
        _f, _n, state = heapq.heappop(open_heap)
        key = (state.cell, state.confidence, state.interval.t_start)
        if state.g > best.get(key, math.inf):
            continue
        expansions += 1
        if state.cell == query.goal:
            break
        for succ in sipp_successors(state, timeline, query.motion_model, query.c_min,
                                    allow_wait=query.allow_wait):
            skey = (succ.cell, succ.confidence, succ.interval.t_start)
            if succ.g < best.get(skey, math.inf) and succ.g < query.T_steps:
                best[skey] = succ.g
                counter += 1
                heapq.heappush(open_heap, (succ.g + grid_distance(succ.cell, query.goal, query.motion_model), counter, succ))
    return expansions


def trajectory_risk_bound(traj: Trajectory) -> float:
    """Union-bound violation probability: sum of (1 - c_t) over occupied steps."""
    return float(sum(1.0 - c for _, _, c in traj.waypoints))


def export_intervals_csv(timeline: IntervalTimeline, path) -> None:
    ws = timeline.workspace
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "confidence", "t_start", "t_end"])
        for (cell, c), ivs in sorted(timeline.intervals.items(), key=lambda kv: (ws.cell_index(kv[0][0]), -kv[0][1])):
            cx, cy = ws.cell_center(cell)
            for iv in ivs:
                w.writerow([repr(float(cx)), repr(float(cy)), repr(float(c)), iv.t_start, iv.t_end])
