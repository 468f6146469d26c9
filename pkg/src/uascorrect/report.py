"""Cross-validation report files: the summary table, per-fold CSV, and SVG figures.

Figures are written as plain SVG so no plotting runtime is needed.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .harness import TRACE_METRICS, CvReport
from .losses import TABLE_ORDER, LossKind
from .metrics import CSV_HEADER, METRIC_LABELS, MetricReport

BOXPLOT_METRICS = tuple(m for m in MetricReport.names() if m != "mpe")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def format_number(x: float) -> str:
    """Three decimals below 1, three significant figures above, exponent form from 1e4."""
    if not math.isfinite(x):
        return str(x)
    ax = abs(x)
    if ax < 1:
        return f"{x:.3f}"
    if ax < 1e4:
        digits = max(0, 2 - int(math.floor(math.log10(ax))))
        return f"{x:.{digits}f}"
    mantissa, exp = f"{x:.2e}".split("e")
    return f"{mantissa.rstrip('0').rstrip('.')}e{int(exp)}"


def format_cell(mean: float, std: float) -> str:
    return f"{format_number(mean)} ({format_number(std)})"


def ordered_losses(report: CvReport) -> list[str]:
    present = set(report.losses)
    return [k.value for k in TABLE_ORDER if k.value in present]


def write_table(report: CvReport, path: Path) -> None:
    losses = ordered_losses(report)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Metric", *(LossKind(l).label for l in losses)])
        for metric in MetricReport.names():
            w.writerow([METRIC_LABELS[metric],
                        *(format_cell(report.mean(l, metric), report.std(l, metric)) for l in losses)])


def write_folds(report: CvReport, path: Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for loss in ordered_losses(report):
            for res in sorted(report.results[loss], key=lambda r: r.fold):
                w.writerow(res.metrics.csv_row(loss, res.fold))


# --------------------------------------------------------------------------- svg


class _Canvas:
    """Minimal SVG builder with a linear data-to-pixel mapping."""

    def __init__(self, width: int = 640, height: int = 400, margin=(60, 20, 30, 60)):
        self.width, self.height = width, height
        self.left, self.right, self.top, self.bottom = margin
        self.parts: list[str] = []

    def set_range(self, x0: float, x1: float, y0: float, y1: float) -> None:
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y0 + 0.5
        pad = 0.05 * (y1 - y0)
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0 - pad, y1 + pad

    def px(self, x: float) -> float:
        span = self.width - self.left - self.right
        return self.left + (x - self.x0) / (self.x1 - self.x0) * span

    def py(self, y: float) -> float:
        span = self.height - self.top - self.bottom
        return self.height - self.bottom - (y - self.y0) / (self.y1 - self.y0) * span

    def add(self, element: str) -> None:
        self.parts.append(element)

    def line(self, x1, y1, x2, y2, color="#000", width=1.0) -> None:
        self.add(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                 f'stroke="{color}" stroke-width="{width}"/>')

    def text(self, x, y, label, anchor="middle", size=12, rotate=None) -> None:
        transform = f' transform="rotate({rotate} {x:.2f} {y:.2f})"' if rotate is not None else ""
        self.add(f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" font-family="sans-serif" '
                 f'text-anchor="{anchor}"{transform}>{escape(str(label))}</text>')

    def axes(self, title: str, ylabel: str, xlabel: str = "") -> None:
        bottom = self.height - self.bottom
        self.line(self.left, self.top, self.left, bottom)
        self.line(self.left, bottom, self.width - self.right, bottom)
        for tick in np.linspace(self.y0, self.y1, 5):
            y = self.py(tick)
            self.line(self.left - 4, y, self.left, y)
            self.text(self.left - 6, y + 4, format_number(float(tick)), anchor="end", size=10)
        self.text(self.width / 2, self.top - 12, title, size=14)
        self.text(16, (self.top + bottom) / 2, ylabel, rotate=-90)
        if xlabel:
            self.text((self.left + self.width - self.right) / 2, self.height - 12, xlabel)

    def save(self, path: Path) -> None:
        body = "\n".join(self.parts)
        Path(path).write_text(
            f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">\n'
            f'<rect width="100%" height="100%" fill="#fff"/>\n{body}\n</svg>\n'
        )


def box_stats(values: Sequence[float]) -> dict[str, float | list[float]]:
    """Quartiles, whiskers at the furthest points within 1.5 IQR, and outliers."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    # interpolated quartiles can sit past the last inlier; whiskers never enter the box
    low, high = min(float(inside.min()), float(q1)), max(float(inside.max()), float(q3))
    return {
        "q1": float(q1), "median": float(med), "q3": float(q3), "low": low, "high": high,
        "outliers": [float(x) for x in v if x < q1 - 1.5 * iqr or x > q3 + 1.5 * iqr],
    }


def boxplot_svg(groups: dict[str, Sequence[float]], title: str, path: Path) -> None:
    stats = {name: box_stats(vals) for name, vals in groups.items()}
    lo = min(min(s["low"], *s["outliers"]) if s["outliers"] else s["low"] for s in stats.values())
    hi = max(max(s["high"], *s["outliers"]) if s["outliers"] else s["high"] for s in stats.values())
    c = _Canvas()
    c.set_range(0.5, len(groups) + 0.5, lo, hi)
    c.axes(title, title)
    half = 0.25 * (c.px(1) - c.px(0))
    for i, (name, s) in enumerate(stats.items(), start=1):
        x = c.px(i)
        color = PALETTE[(i - 1) % len(PALETTE)]
        c.line(x, c.py(s["low"]), x, c.py(s["q1"]))
        c.line(x, c.py(s["q3"]), x, c.py(s["high"]))
        for end in (s["low"], s["high"]):
            c.line(x - half / 2, c.py(end), x + half / 2, c.py(end))
        top, bottom = c.py(s["q3"]), c.py(s["q1"])
        c.add(f'<rect x="{x - half:.2f}" y="{top:.2f}" width="{2 * half:.2f}" '
              f'height="{max(bottom - top, 0.5):.2f}" fill="{color}" fill-opacity="0.35" stroke="{color}"/>')
        c.line(x - half, c.py(s["median"]), x + half, c.py(s["median"]), color="#000", width=2)
        for o in s["outliers"]:
            c.add(f'<circle cx="{x:.2f}" cy="{c.py(o):.2f}" r="3" fill="none" stroke="{color}"/>')
        c.text(x, c.height - c.bottom + 16, name, size=11)
    c.save(path)


def curve_svg(series: dict[str, Sequence[float]], title: str, ylabel: str, path: Path) -> None:
    finite = [v for vals in series.values() for v in vals if math.isfinite(v)]
    longest = max(len(v) for v in series.values())
    c = _Canvas()
    c.set_range(1, max(longest, 2), min(finite), max(finite))
    c.axes(title, ylabel, "Epoch")
    for i, (name, vals) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{c.px(e):.2f},{c.py(v):.2f}" for e, v in enumerate(vals, start=1) if math.isfinite(v))
        c.add(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = c.top + 14 * (i + 1)
        c.line(c.width - c.right - 150, ly - 4, c.width - c.right - 130, ly - 4, color=color, width=2)
        c.text(c.width - c.right - 125, ly, name, anchor="start", size=11)
    c.save(path)


def mean_curves(report: CvReport, key: str) -> dict[str, list[float]]:
    """Per-loss epoch curve averaged over folds, keyed by loss kind; ``key`` is "loss" or a traced metric."""
    out = {}
    for loss in ordered_losses(report):
        runs = []
        for res in report.results[loss]:
            if key == "loss":
                runs.append(res.trace.epoch_loss)
            elif res.trace.validation:
                runs.append([v[key] for v in res.trace.validation])
        if runs:
            n = min(len(r) for r in runs)
            out[loss] = np.mean([r[:n] for r in runs], axis=0).tolist()
    return out


def emit_report(report: CvReport, out_dir: str | Path) -> list[Path]:
    """Write table.csv, folds.csv, boxplot_<metric>.svg, curve_loss_<kind>.svg and
    curve_<metric>.svg; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "table.csv", out / "folds.csv"]
    write_table(report, written[0])
    write_folds(report, written[1])
    losses = ordered_losses(report)
    for metric in BOXPLOT_METRICS:
        path = out / f"boxplot_{metric}.svg"
        groups = {LossKind(l).label: report.values(l, metric).tolist() for l in losses}
        boxplot_svg(groups, METRIC_LABELS[metric], path)
        written.append(path)
    # loss scales differ by orders of magnitude across kinds, so one chart each
    for loss, curve in mean_curves(report, "loss").items():
        label = LossKind(loss).label
        path = out / f"curve_loss_{loss}.svg"
        curve_svg({label: curve}, f"Training loss: {label}", "Loss", path)
        written.append(path)
    for key in TRACE_METRICS:
        series = {LossKind(l).label: c for l, c in mean_curves(report, key).items()}
        if not series:
            continue
        path = out / f"curve_{key}.svg"
        curve_svg(series, f"Validation {METRIC_LABELS[key]}", METRIC_LABELS[key], path)
        written.append(path)
    return written
