import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uascorrect.harness import CvReport, FoldResult, TRACE_METRICS, TrainingTrace
from uascorrect.metrics import CSV_HEADER, MetricReport
from uascorrect.report import (
    BOXPLOT_METRICS,
    box_stats,
    emit_report,
    format_cell,
    format_number,
    mean_curves,
)

LOSSES = ("bce", "cce", "mse", "mae", "mape")


def fake_report(k=10, epochs=4, seed=0):
    rng = np.random.default_rng(seed)
    results = {}
    for loss in LOSSES:
        folds = []
        for f in range(k):
            m = MetricReport(*rng.uniform(0.1, 0.9, 7))
            trace = TrainingTrace(sorted(rng.uniform(0.1, 1.0, epochs), reverse=True),
                                  [{key: float(rng.random()) for key in TRACE_METRICS} for _ in range(epochs)])
            folds.append(FoldResult(loss, f, m, m, trace))
        results[loss] = folds
    return CvReport(k, results)


@pytest.mark.parametrize("value, text", [
    (0.886, "0.886"), (0.0543, "0.054"), (0.0, "0.000"), (-0.3333, "-0.333"),
    (1.0, "1.00"), (12.345, "12.3"), (363.08, "363"), (9999.0, "9999"),
    (1.46e6, "1.46e6"), (12345.0, "1.23e4"), (1e4, "1e4"),
])
def test_format_number(value, text):
    assert format_number(value) == text


def test_format_cell():
    assert format_cell(0.886, 0.054) == "0.886 (0.054)"
    assert format_cell(1.46e6, 2.1e5) == "1.46e6 (2.1e5)"


def test_box_stats_against_numpy():
    vals = [0.1, 0.2, 0.25, 0.3, 0.35, 0.4, 5.0]
    s = box_stats(vals)
    q1, q3 = np.percentile(vals, [25, 75])
    assert s["q1"] == q1 and s["q3"] == q3 and s["median"] == 0.3
    assert s["outliers"] == [5.0] and s["high"] == 0.4 and s["low"] == 0.1


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30))
def test_box_stats_ordering(vals):
    s = box_stats(vals)
    assert s["low"] <= s["q1"] <= s["median"] <= s["q3"] <= s["high"]
    assert all(x < s["low"] or x > s["high"] for x in s["outliers"])
    assert len(s["outliers"]) < len(vals)


def test_emit_report_files(tmp_path):
    report = fake_report()
    paths = emit_report(report, tmp_path)
    assert all(p.exists() for p in paths)
    names = {p.name for p in paths}
    assert {f"boxplot_{m}.svg" for m in BOXPLOT_METRICS} <= names
    assert "boxplot_mpe.svg" not in names
    assert {f"curve_loss_{l}.svg" for l in LOSSES} <= names
    assert {f"curve_{m}.svg" for m in TRACE_METRICS} <= names
    for p in paths:
        if p.suffix == ".svg":
            root = ET.parse(p).getroot()
            assert root.tag.endswith("svg")


def test_table_shape_and_cells(tmp_path):
    report = fake_report()
    emit_report(report, tmp_path)
    rows = list(csv.reader((tmp_path / "table.csv").open()))
    assert len(rows) == 8 and all(len(r) == 6 for r in rows)
    assert rows[0][1:] == ["Binary cross entropy", "Categorical cross entropy", "MAE", "MAPE", "MSE"]
    ssim_row = next(r for r in rows if r[0] == "SSIM")
    expected = format_cell(report.mean("bce", "ssim"), report.std("bce", "ssim"))
    assert ssim_row[1] == expected


def test_folds_csv(tmp_path):
    report = fake_report(k=3)
    emit_report(report, tmp_path)
    rows = list(csv.reader((tmp_path / "folds.csv").open()))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 1 + 3 * len(LOSSES)
    bce = [r for r in rows[1:] if r[0] == "bce"]
    assert [int(r[1]) for r in bce] == [0, 1, 2]
    assert float(bce[0][CSV_HEADER.index("ssim")]) == report.results["bce"][0].metrics.ssim


def test_mean_curves():
    report = fake_report(k=2, epochs=3)
    curves = mean_curves(report, "loss")
    runs = [r.trace.epoch_loss for r in report.results["mae"]]
    assert curves["mae"] == pytest.approx(np.mean(runs, axis=0).tolist())
    assert set(mean_curves(report, "ssim")) == set(LOSSES)


def test_report_without_validation_traces(tmp_path):
    report = fake_report(k=2)
    for folds in report.results.values():
        for r in folds:
            r.trace.validation.clear()
    names = {p.name for p in emit_report(report, tmp_path)}
    assert "curve_ssim.svg" not in names and "curve_loss_bce.svg" in names
