"""Figure rendering for benchmark reports.

Renders grouped bar charts next to a report file: one figure for wall
times, one for the final residual norms (log scale). Import is cheap;
matplotlib is only touched when a figure is actually drawn.
"""
from __future__ import annotations

import os

import numpy as np


def _grouped(ax, groups, series, values, ylabel):
    """Bars grouped by problem name, one bar per pipeline."""
    width = 0.8 / max(1, len(series))
    base = np.arange(len(groups))
    for j, name in enumerate(series):
        offs = base + (j - (len(series) - 1) / 2.0) * width
        ax.bar(offs, values[j], width, label=name)
    ax.set_xticks(base)
    ax.set_xticklabels(groups, rotation=20, ha="right")
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend(fontsize=8)


def _collect(report, attr):
    groups = []
    for rec in report.records:
        if rec.problem not in groups:
            groups.append(rec.problem)
    series = []
    for rec in report.records:
        if rec.pipeline not in series:
            series.append(rec.pipeline)
    vals = np.full((len(series), len(groups)), np.nan)
    for rec in report.records:
        vals[series.index(rec.pipeline), groups.index(rec.problem)] = \
            getattr(rec, attr)
    return groups, series, vals


def render_report(report, out_path) -> list:
    """Write {stem}_times.png and {stem}_residuals.png next to the
    report at out_path; returns the figure paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    stem, _ = os.path.splitext(str(out_path))
    paths = []

    groups, series, vals = _collect(report, "wall_s")
    fig, ax = plt.subplots(figsize=(7, 4))
    _grouped(ax, groups, series, vals, "wall time [s]")
    ax.set_title("solution time by problem and pipeline")
    fig.tight_layout()
    path = f"{stem}_times.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, attr, label in ((axes[0], "stat_res", "stationarity"),
                            (axes[1], "comp_res", "complementarity")):
        groups, series, vals = _collect(report, attr)
        shown = np.maximum(vals, 1e-300)
        _grouped(ax, groups, series, shown, f"{label} residual")
        ax.set_yscale("log")
    fig.tight_layout()
    path = f"{stem}_residuals.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths
