"""Time-aware conformal RRT with a decaying confidence schedule, plus the
receding-horizon execution loop that couples it to online ACP feedback.

Node times follow t_new = t_near + ||x_new - x_near|| / v_max; every edge is
checked against ACP-inflated prediction radii at sampled points along it.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .acp import AcpController
from .conformal import ConfidenceLadder, QuantileTable
from .envsim import ObstacleTrajectory, Predictor, Scenario, predict


@dataclass(frozen=True)
class RrtConfig:
    v_max: float = 1.0
    step_size: float = 1.0
    goal_center: tuple[float, float] = (0.0, 0.0)
    goal_radius: float = 0.5
    horizon_H: float = 50.0
    c_start: float = 0.95
    c_end: float = 0.6
    max_iterations: int = 2000
    goal_bias: float = 0.05
    rng_seed: int = 0
    robot_radius: float = 0.0
    node_only_checks: bool = False  # skip intermediate edge samples (ablation)

    def __post_init__(self):
        if self.c_start < self.c_end:
            raise ValueError("c_start must be >= c_end")
        if not (0.0 <= self.c_end and self.c_start <= 1.0):
            raise ValueError("schedule endpoints must lie in [0, 1]")
        if self.v_max <= 0 or self.step_size <= 0:
            raise ValueError("v_max and step_size must be positive")
        if not (0.0 <= self.goal_bias <= 1.0):
            raise ValueError("goal_bias must lie in [0, 1]")


@dataclass
class TreeNode:
    position: np.ndarray
    t: float
    confidence: float
    parent: "TreeNode | None" = None


def confidence_schedule(t: float, cfg: RrtConfig) -> float:
    """Linear decay from c_start at t=0 to c_end at t=H; clamps beyond H."""
    if t < 0:
        raise ValueError("t must be >= 0")
    frac = min(t / cfg.horizon_H, 1.0) if cfg.horizon_H > 0 else 1.0
    return cfg.c_end + (cfg.c_start - cfg.c_end) * (1.0 - frac)


def _predicted_at(predicted: Sequence[ObstacleTrajectory], t: float) -> np.ndarray:
    return np.stack([p.position_at(min(max(t, p.t_min), p.t_max)) for p in predicted])


def edge_safe(
    x_from,
    t_from: float,
    x_to,
    t_to: float,
    predicted: Sequence[ObstacleTrajectory],
    radius_fn: Callable[[float], float],
    sample_spacing: float,
    robot_radius: float = 0.0,
    node_only: bool = False,
    blocked_fn: Callable[[np.ndarray], bool] | None = None,
) -> bool:
    """Clearance check along the segment: at every sample, the point must stay
    out of statically blocked cells and the distance to each predicted obstacle
    must exceed the ACP-inflated radius (plus footprints)."""
    if t_to < t_from:
        raise ValueError("t_to must be >= t_from")
    # scalar arithmetic throughout: the edges are short (a handful of samples,
    # 2-3 obstacles), where plain floats beat numpy's per-call overhead; every
    # formula matches position_at / the vector expressions operation for
    # operation, so results are bitwise identical
    ax, ay = float(x_from[0]), float(x_from[1])
    bx, by = float(x_to[0]), float(x_to[1])
    dx, dy = bx - ax, by - ay
    length = math.sqrt(dx * dx + dy * dy)
    if node_only or length == 0.0:
        fractions = (1.0,)
    else:
        n = max(1, math.ceil(length / sample_spacing))
        fractions = tuple((i + 1) / n for i in range(n))
    obs = [(p.times, p._pos_list, p.radius, p.times[0], p.times[-1]) for p in predicted]
    dt_edge = t_to - t_from
    for frac in fractions:
        px = ax + frac * dx
        py = ay + frac * dy
        if blocked_fn is not None and blocked_fn((px, py)):
            return False
        if not obs:
            continue
        t = t_from + frac * dt_edge
        r = radius_fn(t)
        for times, pos, orad, t_min, t_max in obs:
            tc = t_min if t < t_min else (t_max if t > t_max else t)
            idx = bisect_left(times, tc)
            n_t = len(times)
            if idx < n_t and abs(times[idx] - tc) < 1e-9:
                ox, oy = pos[idx]
            elif idx > 0 and abs(times[idx - 1] - tc) < 1e-9:
                ox, oy = pos[idx - 1]
            else:
                idx = 1 if idx < 1 else (n_t - 1 if idx > n_t - 1 else idx)
                t0, t1 = times[idx - 1], times[idx]
                w = (tc - t0) / (t1 - t0)
                p0, p1 = pos[idx - 1], pos[idx]
                ox = (1 - w) * p0[0] + w * p1[0]
                oy = (1 - w) * p0[1] + w * p1[1]
            ddx, ddy = ox - px, oy - py
            if math.sqrt(ddx * ddx + ddy * ddy) <= (r + orad) + robot_radius:
                return False
    return True


def grow_tree(
    start: TreeNode,
    cfg: RrtConfig,
    predicted: Sequence[ObstacleTrajectory],
    radius_fn: Callable[[float, float], float],
    bounds: tuple[float, float, float, float],
    rng: np.random.Generator,
    blocked_fn: Callable[[np.ndarray], bool] | None = None,
) -> list[TreeNode] | None:
    """Grow the time-aware tree until the goal region is reached.

    radius_fn(t, c) maps an absolute time and scheduled confidence to the
    required clearance radius. Returns the root-to-goal node path, or None
    after max_iterations. Times and the schedule are relative to start.t.
    """
    xmin, ymin, xmax, ymax = bounds
    goal = np.asarray(cfg.goal_center, dtype=float)

    def schedule_at(t_abs: float) -> float:
        return confidence_schedule(max(t_abs - start.t, 0.0), cfg)

    def clearance(t_abs: float) -> float:
        return radius_fn(t_abs, schedule_at(t_abs))

    if not edge_safe(
        start.position, start.t, start.position, start.t, predicted, clearance,
        cfg.step_size / 4, cfg.robot_radius, blocked_fn=blocked_fn,
    ):
        return None
    if float(np.linalg.norm(start.position - goal)) <= cfg.goal_radius:
        return [start]

    nodes = [start]
    positions = np.empty((cfg.max_iterations + 1, 2))
    positions[0] = start.position

    for _ in range(cfg.max_iterations):
        if rng.random() < cfg.goal_bias:
            x_rand = goal
        else:
            x_rand = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        d2 = np.sum((positions[: len(nodes)] - x_rand) ** 2, axis=1)
        near = nodes[int(np.argmin(d2))]
        delta = x_rand - near.position
        dist = float(np.linalg.norm(delta))
        if dist < 1e-12:
            continue
        x_new = near.position + delta * min(1.0, cfg.step_size / dist)
        seg = float(np.linalg.norm(x_new - near.position))
        t_new = near.t + seg / cfg.v_max
        c_new = schedule_at(t_new)
        if not edge_safe(
            near.position, near.t, x_new, t_new, predicted, clearance,
            cfg.step_size / 4, cfg.robot_radius, node_only=cfg.node_only_checks,
            blocked_fn=blocked_fn,
        ):
            continue
        node = TreeNode(x_new, t_new, c_new, parent=near)
        positions[len(nodes)] = x_new
        nodes.append(node)
        if float(np.linalg.norm(x_new - goal)) <= cfg.goal_radius:
            path = [node]
            while path[-1].parent is not None:
                path.append(path[-1].parent)
            path.reverse()
            return path
    return None


def average_path_confidence(path: Sequence[TreeNode]) -> float:
    if not path:
        raise ValueError("path must be nonempty")
    return float(np.mean([n.confidence for n in path]))


# ----------------------------------------------------------- receding horizon

@dataclass(frozen=True)
class RunSetup:
    start: tuple[float, float]
    base_quantiles: QuantileTable
    ladder: ConfidenceLadder
    robot_radius: float = 0.0
    acp_enabled: bool = True
    predictor_seed: int = 0


@dataclass
class StepRecord:
    t: float
    x: float
    y: float
    lam: float
    e_t: int | None
    c_next: float | None
    min_obstacle_dist: float
    collided: bool
    stalled: bool = False
    path_mean_confidence: float | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "t": round(self.t, 9),
                "x": round(self.x, 9),
                "y": round(self.y, 9),
                "lambda": round(self.lam, 9),
                "e_t": self.e_t,
                "c_next": None if self.c_next is None else round(self.c_next, 9),
                "min_obstacle_dist": round(self.min_obstacle_dist, 9),
                "collided": self.collided,
                "stalled": self.stalled,
            },
            sort_keys=True,
        )


@dataclass
class RunLog:
    records: list[StepRecord]
    reached_goal: bool
    collided: bool
    collision_time: float | None
    final_time: float
    path_confidence_series: list[float]
    path_confidences: list[tuple[float, ...]]  # per replan, node confidences in order
    gate_rejected: bool

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for r in self.records:
                f.write(r.to_json() + "\n")


def _truth_position(scenario: Scenario, i: int, t: float) -> np.ndarray:
    return np.asarray(scenario.obstacles[i].position(t), dtype=float)


def _make_history(scenario: Scenario, i: int, t_now: float, lookback: int) -> ObstacleTrajectory:
    times = [t_now - k * scenario.dt for k in range(max(lookback, 2) - 1, -1, -1)]
    pos = np.stack([_truth_position(scenario, i, t) for t in times])
    return ObstacleTrajectory(i, tuple(times), pos, radius=scenario.obstacles[i].radius)


def _make_truth_segment(
    scenario: Scenario, i: int, t_now: float, horizon_steps: int
) -> ObstacleTrajectory:
    times = [t_now + k * scenario.dt for k in range(horizon_steps + 1)]
    pos = np.stack([_truth_position(scenario, i, t) for t in times])
    return ObstacleTrajectory(i, tuple(times), pos, radius=scenario.obstacles[i].radius)


def receding_horizon_run(
    scenario: Scenario,
    cfg: RrtConfig,
    controller: AcpController,
    predictor: Predictor,
    setup: RunSetup,
) -> RunLog:
    """Closed loop: observe, score, update ACP, re-predict, re-plan, execute one
    segment. A collision ends the run (logged, never masked); tree failure is a
    one-step stall."""
    ws = scenario.workspace
    bounds = (0.0, 0.0, ws.width, ws.height)
    n_obs = len(scenario.obstacles)
    rng = np.random.default_rng(np.random.SeedSequence([setup.predictor_seed, cfg.rng_seed]))

    pos = np.asarray(setup.start, dtype=float)
    t_now = 0.0
    goal = np.asarray(cfg.goal_center)
    records: list[StepRecord] = []
    conf_series: list[float] = []
    path_confs: list[tuple[float, ...]] = []
    predicted: list[ObstacleTrajectory] | None = None
    collided = False
    collision_time = None
    reached = float(np.linalg.norm(pos - goal)) <= cfg.goal_radius
    lowest_level = min(setup.ladder.levels)

    def radius_fn(t_abs: float, c: float) -> float:
        level = setup.ladder.snap_down(c)
        if level is None:
            level = lowest_level
        step = int(round((t_abs - t_now) / scenario.dt))
        step = min(max(step, 0), setup.base_quantiles.horizon_steps - 1)
        return controller.radius(setup.base_quantiles.threshold(level, step))

    max_cycles = int(math.ceil(scenario.horizon_T / scenario.dt)) * 2
    for _cycle in range(max_cycles):
        if reached or collided or t_now >= scenario.horizon_T - 1e-9:
            break

        true_now = np.stack([_truth_position(scenario, i, t_now) for i in range(n_obs)])
        e_t = None
        if predicted is not None and n_obs:
            pred_now = _predicted_at(predicted, t_now)
            r_t = float(np.max(np.linalg.norm(pred_now - true_now, axis=1)))
            d_min = float(np.min(np.linalg.norm(pred_now - pos, axis=1)))
            _, e_t = controller.observe(r_t, d_min)

        remaining = scenario.horizon_T - t_now
        horizon_steps = max(2, int(math.ceil(remaining / scenario.dt)))
        horizon_steps = min(horizon_steps, setup.base_quantiles.horizon_steps)
        predicted = []
        for i in range(n_obs):
            history = _make_history(scenario, i, t_now, predictor.lookback)
            truth_seg = (
                _make_truth_segment(scenario, i, t_now, horizon_steps)
                if predictor.kind == "oracle_with_noise"
                else None
            )
            predicted.append(
                predict(predictor, history, horizon_steps, scenario.dt, rng=rng, truth=truth_seg)
            )

        min_true_dist = (
            float(np.min(np.linalg.norm(true_now - pos, axis=1))) if n_obs else math.inf
        )

        start_node = TreeNode(pos.copy(), t_now, confidence_schedule(0.0, cfg))
        path = grow_tree(start_node, cfg, predicted, radius_fn, bounds, rng,
                         blocked_fn=ws.point_blocked)

        if path is None or len(path) < 2:
            if path is not None and len(path) == 1:
                reached = True
                records.append(
                    StepRecord(t_now, pos[0], pos[1], controller.acp_state.lam, e_t,
                               path[0].confidence, min_true_dist, False)
                )
                conf_series.append(average_path_confidence(path))
                path_confs.append(tuple(n.confidence for n in path))
                break
            # no certified plan: evade one step away from the nearest predicted
            # obstacle rather than sit in its path
            t_next = min(t_now + scenario.dt, scenario.horizon_T)
            evade = pos.copy()
            if n_obs:
                pred_next = _predicted_at(predicted, t_next)
                step_r = cfg.v_max * (t_next - t_now)
                best_clear = -math.inf
                for dx, dy in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1),
                               (1, 1), (1, -1), (-1, 1), (-1, -1)):
                    d = np.array([dx, dy], dtype=float)
                    norm = float(np.linalg.norm(d))
                    cand = pos + (d / norm * step_r if norm else 0.0)
                    cand[0] = min(max(cand[0], bounds[0]), bounds[2])
                    cand[1] = min(max(cand[1], bounds[1]), bounds[3])
                    if ws.point_blocked(cand):
                        continue
                    clear = float(np.min(np.linalg.norm(pred_next - cand, axis=1)))
                    if clear > best_clear:
                        best_clear = clear
                        evade = cand
            if n_obs:
                seg_len = float(np.linalg.norm(evade - pos))
                n_samples = max(1, math.ceil(max(seg_len, 1e-9) / (cfg.step_size / 4)))
                for k in range(1, n_samples + 1):
                    frac = k / n_samples
                    p = pos + frac * (evade - pos)
                    t = t_now + frac * (t_next - t_now)
                    hit = any(
                        float(np.linalg.norm(p - _truth_position(scenario, i, t)))
                        <= setup.robot_radius + scenario.obstacles[i].radius
                        for i in range(n_obs)
                    )
                    if hit:
                        collided = True
                        collision_time = t
                        break
            records.append(
                StepRecord(t_now, pos[0], pos[1], controller.acp_state.lam, e_t,
                           None, min_true_dist, collided, stalled=True)
            )
            pos = evade
            t_now = t_next
            continue

        conf_series.append(average_path_confidence(path))
        path_confs.append(tuple(n.confidence for n in path))
        nxt = path[1]
        # ground-truth check along the executed segment
        seg_len = float(np.linalg.norm(nxt.position - pos))
        n_samples = max(1, math.ceil(seg_len / (cfg.step_size / 4)))
        for k in range(1, n_samples + 1):
            frac = k / n_samples
            p = pos + frac * (nxt.position - pos)
            t = t_now + frac * (nxt.t - t_now)
            hit = any(
                float(np.linalg.norm(p - _truth_position(scenario, i, t)))
                <= setup.robot_radius + scenario.obstacles[i].radius
                for i in range(n_obs)
            )
            if hit:
                collided = True
                collision_time = t
                break
        records.append(
            StepRecord(t_now, pos[0], pos[1], controller.acp_state.lam, e_t,
                       nxt.confidence, min_true_dist, collided)
        )
        pos = nxt.position.copy()
        t_now = nxt.t
        if float(np.linalg.norm(pos - goal)) <= cfg.goal_radius and not collided:
            reached = True

    return RunLog(
        records=records,
        reached_goal=reached and not collided,
        collided=collided,
        collision_time=collision_time,
        final_time=t_now,
        path_confidence_series=conf_series,
        path_confidences=path_confs,
        gate_rejected=bool(controller.gate_result and controller.gate_result.rejected),
    )
