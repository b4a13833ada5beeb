"""SVG emitter tests: valid output, determinism, and schema errors."""

import json

import pytest

from cpnav.plots import PLOT_KINDS, PlotDataError, emit_plot


def _write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture
def data_files(tmp_path):
    files = {}
    p = tmp_path / "confidence.csv"
    _write_csv(p, ("replan", "mean_confidence"), [(0, 0.95), (1, 0.9), (2, 0.82)])
    files["confidence_evolution"] = p
    p = tmp_path / "coverage.csv"
    _write_csv(p, ("t", "coverage", "halfwidth", "target"),
               [(0, 0.96, 0.02, 0.95), (1, 0.94, 0.02, 0.95)])
    files["coverage_curve"] = p
    p = tmp_path / "lambda.csv"
    _write_csv(p, ("t", "R_t", "d_min", "lambda", "e_t"),
               [(0.0, "", 2.0, 1.0, ""), (1.0, "", 1.5, 1.0, 0), (2.0, "", 0.5, 1.3, 1)])
    files["lambda_trace"] = p
    p = tmp_path / "table.csv"
    _write_csv(p, ("confidence", "t", "threshold"),
               [(c, t, 0.5 + 0.1 * t) for c in (0.9, 0.8) for t in range(3)])
    files["quantile_table_heatmap"] = p
    p = tmp_path / "frames.json"
    p.write_text(json.dumps({
        "frames": [
            {"t": 0.0, "robot": [1.0, 1.0], "obstacles": [[4.0, 4.0]], "radii": [0.5]},
            {"t": 5.0, "robot": [3.0, 3.0], "obstacles": [[4.0, 6.0]], "radii": [0.5]},
        ],
        "path": [[1.0, 1.0], [3.0, 3.0], [7.0, 7.0]],
        "bounds": [8.0, 8.0],
    }))
    files["trajectory_frames"] = p
    return files


@pytest.mark.parametrize("kind", PLOT_KINDS)
def test_each_kind_emits_svg(kind, data_files, tmp_path):
    out = tmp_path / f"{kind}.svg"
    emit_plot(kind, data_files[kind], out)
    body = out.read_text()
    assert body.lstrip().startswith("<?xml")
    assert "<svg" in body


@pytest.mark.parametrize("kind", PLOT_KINDS)
def test_emission_is_deterministic(kind, data_files, tmp_path):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    emit_plot(kind, data_files[kind], a)
    emit_plot(kind, data_files[kind], b)
    assert a.read_bytes() == b.read_bytes()


def test_unknown_kind_and_missing_file(tmp_path, data_files):
    with pytest.raises(PlotDataError, match="unknown plot kind"):
        emit_plot("pie_chart", data_files["lambda_trace"], tmp_path / "x.svg")
    with pytest.raises(PlotDataError, match="not found"):
        emit_plot("lambda_trace", tmp_path / "absent.csv", tmp_path / "x.svg")


def test_missing_columns_are_named(tmp_path):
    p = tmp_path / "bad.csv"
    _write_csv(p, ("t", "lambda"), [(0.0, 1.0)])
    with pytest.raises(PlotDataError, match="e_t"):
        emit_plot("lambda_trace", p, tmp_path / "x.svg")


def test_frames_schema_error(tmp_path):
    p = tmp_path / "frames.json"
    p.write_text(json.dumps({"frames": [], "path": []}))
    with pytest.raises(PlotDataError, match="bounds"):
        emit_plot("trajectory_frames", p, tmp_path / "x.svg")
