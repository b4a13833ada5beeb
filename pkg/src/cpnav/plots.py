"""SVG plot emitters for run artifacts. Data-faithful and deterministic:
fixed svg hashsalt, no embedded date, so identical input gives identical SVG."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "cpnav"
import matplotlib.pyplot as plt  # noqa: E402

PLOT_KINDS = (
    "trajectory_frames",
    "confidence_evolution",
    "coverage_curve",
    "lambda_trace",
    "quantile_table_heatmap",
)


class PlotDataError(ValueError):
    pass


def _read_csv(path, required: tuple[str, ...]) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        cols = reader.fieldnames or []
        missing = [c for c in required if c not in cols]
        if missing:
            raise PlotDataError(f"{path}: missing columns {missing}")
        return list(reader)


def _save(fig, output_path) -> None:
    fig.savefig(output_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_confidence_evolution(data_path, output_path) -> None:
    rows = _read_csv(data_path, ("replan", "mean_confidence"))
    xs = [int(r["replan"]) for r in rows]
    ys = [float(r["mean_confidence"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel("replanning cycle")
    ax.set_ylabel("mean node confidence")
    ax.set_ylim(0.0, 1.05)
    _save(fig, output_path)


def emit_coverage_curve(data_path, output_path) -> None:
    rows = _read_csv(data_path, ("t", "coverage", "halfwidth", "target"))
    ts = [int(r["t"]) for r in rows]
    cov = [float(r["coverage"]) for r in rows]
    half = [float(r["halfwidth"]) for r in rows]
    target = float(rows[0]["target"]) if rows else 0.0
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(ts, cov, yerr=half, fmt="-o", capsize=2, label="empirical coverage")
    ax.axhline(target, color="red", linestyle="--", label=f"target {target:g}")
    ax.set_xlabel("horizon step")
    ax.set_ylabel("coverage")
    ax.legend()
    _save(fig, output_path)


def emit_lambda_trace(data_path, output_path) -> None:
    rows = _read_csv(data_path, ("t", "lambda", "e_t"))
    ts = [float(r["t"]) for r in rows]
    lams = [float(r["lambda"]) for r in rows]
    es = [(float(r["t"]), int(r["e_t"])) for r in rows if r["e_t"] != ""]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ts, lams, label="lambda")
    if es:
        miss = [t for t, e in es if e == 1]
        ax.scatter(miss, [1.0] * len(miss), color="red", marker="x", label="miscoverage")
    ax.set_xlabel("t")
    ax.set_ylabel("scale")
    ax.legend()
    _save(fig, output_path)


def emit_quantile_table_heatmap(data_path, output_path) -> None:
    rows = _read_csv(data_path, ("confidence", "t", "threshold"))
    levels = sorted({float(r["confidence"]) for r in rows}, reverse=True)
    steps = sorted({int(r["t"]) for r in rows})
    grid = [[0.0] * len(steps) for _ in levels]
    for r in rows:
        grid[levels.index(float(r["confidence"]))][steps.index(int(r["t"]))] = float(r["threshold"])
    fig, ax = plt.subplots(figsize=(7, 3))
    im = ax.imshow(grid, aspect="auto", origin="upper")
    ax.set_yticks(range(len(levels)), [f"{c:g}" for c in levels])
    ax.set_xlabel("horizon step")
    ax.set_ylabel("confidence")
    fig.colorbar(im, ax=ax, label="threshold [m]")
    _save(fig, output_path)


def emit_trajectory_frames(data_path, output_path) -> None:
    """Frames JSON: {"frames": [{"t", "robot": [x,y], "obstacles": [[x,y],..],
    "radii": [..]}], "path": [[x,y],..], "bounds": [w,h]}"""
    with open(data_path, "r", encoding="utf-8") as f:
        data = json.load(f)
    for key in ("frames", "path", "bounds"):
        if key not in data:
            raise PlotDataError(f"{data_path}: missing key {key!r}")
    frames = data["frames"]
    path = data["path"]
    w, h = data["bounds"]
    fig, axes = plt.subplots(1, max(len(frames), 1), figsize=(4 * max(len(frames), 1), 4))
    if len(frames) <= 1:
        axes = [axes]
    for ax, frame in zip(axes, frames):
        xs = [p[0] for p in path]
        ys = [p[1] for p in path]
        ax.plot(xs, ys, color="green", linewidth=2, label="path")
        for (ox, oy), r in zip(frame["obstacles"], frame["radii"]):
            ax.add_patch(plt.Circle((ox, oy), r, color="red", alpha=0.25))
            ax.plot([ox], [oy], marker="o", color="darkred", markersize=4)
        ax.plot([frame["robot"][0]], [frame["robot"][1]], marker="s", color="blue")
        ax.set_xlim(0, w)
        ax.set_ylim(0, h)
        ax.set_title(f"t = {frame['t']:g}")
        ax.set_aspect("equal")
    _save(fig, output_path)


_EMITTERS = {
    "trajectory_frames": emit_trajectory_frames,
    "confidence_evolution": emit_confidence_evolution,
    "coverage_curve": emit_coverage_curve,
    "lambda_trace": emit_lambda_trace,
    "quantile_table_heatmap": emit_quantile_table_heatmap,
}


def emit_plot(kind: str, data_path, output_path) -> None:
    if kind not in _EMITTERS:
        raise PlotDataError(f"unknown plot kind {kind!r}; known: {PLOT_KINDS}")
    if not Path(data_path).exists():
        raise PlotDataError(f"data file not found: {data_path}")
    _EMITTERS[kind](data_path, output_path)
