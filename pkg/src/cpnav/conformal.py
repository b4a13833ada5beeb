"""Offline split conformal prediction over obstacle-forecast errors.

Calibration scores are per-episode, per-horizon-step maxima of the prediction
error across obstacles. Quantiles use the conservative split-CP rank
ceil((n+1)*confidence), clipped to n, so the finite-sample coverage guarantee
holds exactly.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .envsim import ObstacleTrajectory


class CoverageWarning(UserWarning):
    """Requested confidence exceeds what the calibration size can certify."""


@dataclass(frozen=True)
class CalibrationSet:
    scores: np.ndarray  # (n_episodes, horizon_steps)

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError("scores must be a nonempty (episodes, steps) matrix")
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite and >= 0")
        object.__setattr__(self, "scores", s)

    @property
    def n_episodes(self) -> int:
        return self.scores.shape[0]

    @property
    def horizon_steps(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class ConfidenceLadder:
    levels: tuple[float, ...]
    c_min: float = 0.0

    def __post_init__(self):
        levels = tuple(float(c) for c in self.levels)
        if len(levels) < 1:
            raise ValueError("ladder needs at least one level")
        if any(b >= a for a, b in zip(levels, levels[1:])):
            raise ValueError("ladder levels must be strictly decreasing")
        if not all(0.0 <= c <= 1.0 for c in levels):
            raise ValueError("ladder levels must lie in [0, 1]")
        if not (0.0 <= self.c_min <= 1.0) or any(c < self.c_min for c in levels):
            raise ValueError("every ladder level must be >= c_min")
        object.__setattr__(self, "levels", levels)

    def snap_down(self, c: float) -> float | None:
        """Highest ladder level not exceeding c, or None if c is below all levels."""
        for level in self.levels:
            if level <= c + 1e-12:
                return level
        return None


@dataclass(frozen=True)
class QuantileTable:
    levels: tuple[float, ...]  # decreasing, mirrors the ladder
    thresholds: np.ndarray  # (n_levels, horizon_steps)

    def __post_init__(self):
        th = np.asarray(self.thresholds, dtype=float)
        if th.ndim != 2 or th.shape[0] != len(self.levels):
            raise ValueError("thresholds must be (n_levels, steps)")
        if np.any(th < 0):
            raise ValueError("thresholds must be >= 0")
        # decreasing level order => each row bounds the ones below it
        if np.any(np.diff(th, axis=0) > 1e-12):
            raise ValueError("thresholds must be non-decreasing in confidence")
        object.__setattr__(self, "levels", tuple(float(c) for c in self.levels))
        object.__setattr__(self, "thresholds", th)

    @property
    def horizon_steps(self) -> int:
        return self.thresholds.shape[1]

    def threshold(self, confidence: float, t: int) -> float:
        for i, level in enumerate(self.levels):
            if abs(level - confidence) < 1e-12:
                return float(self.thresholds[i, t])
        raise KeyError(f"confidence {confidence} not in table levels {self.levels}")

    def row(self, confidence: float) -> np.ndarray:
        for i, level in enumerate(self.levels):
            if abs(level - confidence) < 1e-12:
                return self.thresholds[i]
        raise KeyError(f"confidence {confidence} not in table levels {self.levels}")


def episode_scores(
    truth: Sequence[ObstacleTrajectory], predicted: Sequence[ObstacleTrajectory]
) -> np.ndarray:
    """Per-step max-over-obstacles prediction error for one episode.

    Steps are aligned on the prediction's own sample grid; truth is evaluated
    at the same times.
    """
    if len(truth) != len(predicted):
        raise ValueError(f"obstacle count mismatch: {len(truth)} truth vs {len(predicted)} predicted")
    n_steps = len(predicted[0].times)
    errs = np.empty((len(truth), n_steps))
    for i, (tr, pr) in enumerate(zip(truth, predicted)):
        if len(pr.times) != n_steps:
            raise ValueError("predictions have inconsistent horizon lengths")
        true_pos = np.stack([tr.position_at(t) for t in pr.times])
        errs[i] = np.linalg.norm(pr.positions - true_pos, axis=1)
    return errs.max(axis=0)


def collect_scores(
    truths: Sequence[Sequence[ObstacleTrajectory]],
    predictions: Sequence[Sequence[ObstacleTrajectory]],
) -> CalibrationSet:
    """Stack per-episode score rows into a calibration matrix."""
    if len(truths) != len(predictions):
        raise ValueError("episode count mismatch between truths and predictions")
    rows = [episode_scores(tr, pr) for tr, pr in zip(truths, predictions)]
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ValueError(f"episodes have differing horizon lengths: {sorted(lengths)}")
    return CalibrationSet(np.stack(rows))


def quantile_threshold(cal: CalibrationSet, t: int, confidence: float) -> float:
    """Conservative split-CP quantile of step-t scores: rank ceil((n+1)c), clipped to n."""
    if not (0.0 < confidence < 1.0):
        raise ValueError("confidence must lie in (0, 1)")
    if not (0 <= t < cal.horizon_steps):
        raise ValueError(f"step {t} outside horizon [0, {cal.horizon_steps})")
    n = cal.n_episodes
    k = math.ceil((n + 1) * confidence)
    if k > n:
        warnings.warn(
            f"confidence {confidence} needs rank {k} > n={n}; returning the max score. "
            "Finite-sample validity requires more calibration episodes.",
            CoverageWarning,
            stacklevel=2,
        )
        k = n
    col = np.sort(cal.scores[:, t])
    return float(col[k - 1])


def confidence_at(cal: CalibrationSet, location, t: int, predicted_positions) -> float:
    """Empirical fraction of step-t calibration scores <= distance to the nearest
    predicted obstacle (the spatial confidence field)."""
    pred = np.asarray(predicted_positions, dtype=float).reshape(-1, 2)
    if pred.shape[0] == 0:
        raise ValueError("predicted positions must be nonempty")
    if not (0 <= t < cal.horizon_steps):
        raise ValueError(f"step {t} outside horizon [0, {cal.horizon_steps})")
    d_min = float(np.min(np.linalg.norm(pred - np.asarray(location, dtype=float), axis=1)))
    return float(np.mean(cal.scores[:, t] <= d_min))


def build_quantile_table(cal: CalibrationSet, ladder: ConfidenceLadder) -> QuantileTable:
    th = np.empty((len(ladder.levels), cal.horizon_steps))
    for i, c in enumerate(ladder.levels):
        for t in range(cal.horizon_steps):
            th[i, t] = quantile_threshold(cal, t, c)
    return QuantileTable(ladder.levels, th)


def export_quantile_table_csv(table: QuantileTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["confidence", "t", "threshold"])
        for i, c in enumerate(table.levels):
            for t in range(table.horizon_steps):
                w.writerow([repr(float(c)), t, repr(float(table.thresholds[i, t]))])


def import_quantile_table_csv(path) -> QuantileTable:
    by_level: dict[float, dict[int, float]] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            by_level.setdefault(float(row["confidence"]), {})[int(row["t"])] = float(
                row["threshold"]
            )
    levels = sorted(by_level, reverse=True)
    n_steps = len(by_level[levels[0]])
    th = np.array([[by_level[c][t] for t in range(n_steps)] for c in levels])
    return QuantileTable(tuple(levels), th)
