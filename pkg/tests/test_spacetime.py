"""Space-time A* tests, including a brute-force product-graph oracle."""

import math

import numpy as np
import pytest

from cpnav.conformal import CalibrationSet, ConfidenceLadder, build_quantile_table
from cpnav.envsim import Workspace
from cpnav.grid import PlanQuery
from cpnav.spacetime import (
    build_confidence_field,
    edge_weight,
    min_obstacle_distance_grid,
    plan_spacetime,
)


def _static_predictions(positions, n_steps):
    """Obstacles that never move: (n_steps, n_obs, 2)."""
    pos = np.asarray(positions, dtype=float)
    return np.repeat(pos[None, :, :], n_steps, axis=0)


def _field_from_scores(ws, predictions, levels, scores):
    cal = CalibrationSet(scores)
    ladder = ConfidenceLadder(levels, c_min=min(levels))
    table = build_quantile_table(cal, ladder)
    return build_confidence_field(table, predictions, ws, ladder), table, ladder


def test_edge_weight_closed_forms():
    assert edge_weight(1.0, 1.0, 0.0) == 1.0
    assert abs(edge_weight(1.0, 0.5, 0.5) - (0.5 + 0.5 * math.log(2.0))) < 1e-15
    assert edge_weight(2.0, 1.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        edge_weight(1.0, 0.0, 0.5)


def test_min_obstacle_distance_grid():
    ws = Workspace(3.0, 3.0)
    pred = _static_predictions([[1.5, 1.5]], 2)
    d = min_obstacle_distance_grid(pred, ws)
    assert d.shape == (2, 3, 3)
    assert d[0, 1, 1] == 0.0
    np.testing.assert_allclose(d[0, 0, 0], math.sqrt(2.0))


def test_field_blocks_static_cells():
    ws = Workspace(4.0, 4.0, static_blocked_cells=frozenset({(2, 2)}))
    pred = _static_predictions([[0.5, 0.5]], 3)
    rng = np.random.default_rng(0)
    field, _, _ = _field_from_scores(
        ws, pred, (0.9, 0.8), np.abs(rng.normal(0, 0.3, size=(40, 3)))
    )
    assert field.level_at((2, 2), 0) is None
    assert field.level_at((3, 3), 0) is not None


def test_field_levels_shrink_near_obstacle():
    ws = Workspace(6.0, 1.0)
    pred = _static_predictions([[0.5, 0.5]], 1)
    scores = np.linspace(0.1, 3.0, 60)[:, None]  # wide spread of calibration errors
    field, table, ladder = _field_from_scores(ws, pred, (0.9, 0.5), scores)
    # far cell clears the 0.9 threshold, a nearer one only 0.5
    assert field.level_at((5, 0), 0) == 0.9
    lv_near = field.level_at((1, 0), 0)
    assert lv_near in (0.5, None)


def _oracle_earliest_arrival(query, field):
    """Brute-force Dijkstra over the full (cell, t) product graph."""
    ws = field.workspace
    T = min(query.T_steps, field.n_steps)
    moves = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    if query.motion_model == "8-connected":
        moves += [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    if query.allow_wait:
        moves.append((0, 0))
    if field.level_at(query.start, 0) is None:
        return None
    # earliest arrival = BFS in time layers (every move costs one step)
    frontier = {query.start}
    if query.start == query.goal:
        return 0
    for t in range(1, T):
        nxt = set()
        for cell in frontier:
            for dx, dy in moves:
                cand = (cell[0] + dx, cell[1] + dy)
                if not (0 <= cand[0] < ws.n_cells_x and 0 <= cand[1] < ws.n_cells_y):
                    continue
                if field.level_at(cand, t) is None:
                    continue
                if cand == query.goal:
                    return t
                nxt.add(cand)
        frontier = nxt
        if not frontier:
            return None
    return None


def test_arrival_matches_bruteforce_oracle_random_fields():
    rng = np.random.default_rng(42)
    agree = 0
    for trial in range(40):
        nx = int(rng.integers(3, 6))
        ny = int(rng.integers(3, 6))
        T = int(rng.integers(4, 10))
        ws = Workspace(float(nx), float(ny))
        n_obs = int(rng.integers(1, 3))
        pred = rng.uniform(0, [nx, ny], size=(T, n_obs, 2))
        scores = np.abs(rng.normal(0, 0.8, size=(30, T)))
        field, _, _ = _field_from_scores(ws, pred, (0.9, 0.7), scores)
        query = PlanQuery(start=(0, 0), goal=(nx - 1, ny - 1), gamma=0.0,
                          c_min=0.7, T_steps=T)
        got = plan_spacetime(query, field)
        want = _oracle_earliest_arrival(query, field)
        if want is None:
            assert not got.feasible, f"trial {trial}: oracle infeasible, planner found a path"
        else:
            assert got.feasible, f"trial {trial}: oracle arrival {want}, planner infeasible"
            assert got.trajectory.total_time == want, f"trial {trial}"
        agree += 1
    assert agree == 40


def test_waypoints_are_contiguous_in_time():
    ws = Workspace(5.0, 5.0)
    pred = _static_predictions([[2.5, 0.5]], 8)
    rng = np.random.default_rng(1)
    field, _, _ = _field_from_scores(
        ws, pred, (0.9, 0.6), np.abs(rng.normal(0, 0.4, size=(40, 8)))
    )
    out = plan_spacetime(PlanQuery(start=(0, 4), goal=(4, 4), c_min=0.6, T_steps=8), field)
    assert out.feasible
    times = out.trajectory.times()
    assert times == list(range(times[0], times[-1] + 1))
    # every waypoint carries a ladder confidence
    assert all(c is not None and 0 < c <= 1 for c in out.trajectory.confidences())


def test_confidence_tiebreak_prefers_safer_path():
    # two equal-length routes; the southern cells sit nearer the obstacle
    ws = Workspace(3.0, 3.0)
    pred = _static_predictions([[1.5, 0.0]], 6)
    scores = np.linspace(0.05, 2.5, 50)[:, None].repeat(6, axis=1)
    field, _, _ = _field_from_scores(ws, pred, (0.9, 0.8, 0.6, 0.4, 0.2), scores)
    out = plan_spacetime(PlanQuery(start=(0, 0), goal=(2, 0), c_min=0.2, T_steps=6), field)
    assert out.feasible
    alt = plan_spacetime(PlanQuery(start=(0, 2), goal=(2, 2), c_min=0.2, T_steps=6), field)
    assert alt.feasible
    assert alt.trajectory.min_confidence >= out.trajectory.min_confidence


def test_infeasible_start_reports_reason():
    ws = Workspace(3.0, 3.0)
    pred = _static_predictions([[0.5, 0.5]], 4)
    scores = np.full((20, 4), 5.0)  # calibration errors dwarf every cell distance
    field, _, _ = _field_from_scores(ws, pred, (0.9,), scores)
    out = plan_spacetime(PlanQuery(start=(0, 0), goal=(2, 2), c_min=0.9, T_steps=4), field)
    assert not out.feasible
    assert out.reason
