"""Figure rendering from manifold-ghmc CSV tables.

Three figure kinds are supported:

- ``histogram``: empirical angle density bars with the analytic reference
  curve overlaid when the file carries one;
- ``rejection-bars``: grouped bars of the rejection-rate breakdown per
  (scheme, timestep, alpha) cell;
- ``residence-loglog``: mean residence duration against the timestep on
  log-log axes, one line per scheme, with a least-squares slope annotated
  when at least three points fall in the fit window.

Rendering is headless and deterministic: fixed figure geometry, no
timestamps or version strings embedded in the output image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .reader import SchemaError, Table, read_table, require_experiment

KINDS = ("histogram", "rejection-bars", "residence-loglog")

FIGSIZE = (6.4, 4.8)
DPI = 100
# categories of the rejection breakdown, in table order
RATE_COLUMNS = ("total", "newton_forward", "newton_reverse",
                "non_reversible", "metropolis")
MIN_FIT_POINTS = 3


@dataclass(frozen=True)
class FigureSpec:
    inputs: tuple[Path, ...]
    kind: str
    output: Path
    title: str | None = None
    xlabel: str | None = None
    ylabel: str | None = None
    fit_window: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise SchemaError("no input files given")


@dataclass
class RenderResult:
    """What was drawn; slopes are per-scheme and None when the fit was refused."""
    output: Path
    slopes: dict[str, float | None] = field(default_factory=dict)
    series: int = 0


def _save(fig, spec: FigureSpec) -> None:
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    # Software=None drops the renderer version string from the PNG metadata
    # so identical inputs give byte-identical images.
    fig.savefig(spec.output, dpi=DPI, metadata={"Software": None})
    plt.close(fig)


def _single_table(spec: FigureSpec, experiment: str) -> Table:
    if len(spec.inputs) != 1:
        raise SchemaError(f"{spec.kind} takes exactly one input file")
    return require_experiment(read_table(spec.inputs[0]), experiment)


def plot_histogram(spec: FigureSpec) -> RenderResult:
    table = _single_table(spec, "histogram")
    lo = np.array(table.floats("bin_lo"))
    hi = np.array(table.floats("bin_hi"))
    density = np.array(table.floats("density"))
    ref = np.array(table.floats("ref_density"))

    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.bar(lo, density, width=hi - lo, align="edge",
           color="#9ecae1", edgecolor="#3182bd", linewidth=0.4,
           label="sampled")
    series = 1
    if np.isfinite(ref).all():
        centers = 0.5 * (lo + hi)
        ax.plot(centers, ref, color="#d62728", linewidth=1.5, label="reference")
        series = 2
    ax.set_xlabel(spec.xlabel or "angle")
    ax.set_ylabel(spec.ylabel or "density")
    ax.set_title(spec.title or f"angle histogram ({table.provenance.get('model', '')})")
    ax.legend(loc="lower center")
    _save(fig, spec)
    return RenderResult(output=spec.output, series=series)


def _cell_label(row: dict[str, str]) -> str:
    label = f"{row['scheme']}\ndt={row['dt']}"
    if row.get("alpha"):
        label += f"\na={row['alpha']}"
    return label


def plot_rejection_bars(spec: FigureSpec) -> RenderResult:
    table = _single_table(spec, "rejection-table")
    for col in RATE_COLUMNS:
        if col not in table.columns:
            raise SchemaError(f"{table.path}: missing column {col!r}")
    n_cells = len(table.rows)
    if n_cells == 0:
        raise SchemaError(f"{table.path}: empty table")
    x = np.arange(n_cells, dtype=float)
    width = 0.8 / len(RATE_COLUMNS)

    fig, ax = plt.subplots(figsize=FIGSIZE)
    for i, col in enumerate(RATE_COLUMNS):
        ax.bar(x + (i - (len(RATE_COLUMNS) - 1) / 2) * width,
               table.floats(col), width=width, label=col.replace("_", " "))
    ax.set_xticks(x, [_cell_label(r) for r in table.rows], fontsize=7)
    ax.set_ylabel(spec.ylabel or "rejection fraction")
    ax.set_title(spec.title or "rejection-rate breakdown")
    ax.legend(fontsize=8)
    _save(fig, spec)
    return RenderResult(output=spec.output, series=len(RATE_COLUMNS))


def fit_loglog_slope(dts, values, window=None):
    """Least-squares slope of log(value) vs log(dt), or None when fewer than
    three finite points fall in the window."""
    dts = np.asarray(dts, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = np.isfinite(values) & (values > 0.0) & (dts > 0.0)
    if window is not None:
        keep &= (dts >= window[0]) & (dts <= window[1])
    if keep.sum() < MIN_FIT_POINTS:
        return None
    slope, _ = np.polyfit(np.log(dts[keep]), np.log(values[keep]), 1)
    return float(slope)


def plot_residence(spec: FigureSpec) -> RenderResult:
    tables = [require_experiment(read_table(p), "residence-sweep")
              for p in spec.inputs]
    by_scheme: dict[str, list[tuple[float, float]]] = {}
    for table in tables:
        dts = table.floats("dt")
        taus = table.floats("mean_residence")
        for row, dt, tau in zip(table.rows, dts, taus):
            by_scheme.setdefault(row["scheme"], []).append((dt, tau))
    if not by_scheme:
        raise SchemaError("no residence rows in the input files")

    fig, ax = plt.subplots(figsize=FIGSIZE)
    slopes: dict[str, float | None] = {}
    for scheme in sorted(by_scheme):
        pts = sorted(by_scheme[scheme])
        dts = [dt for dt, _ in pts]
        taus = [tau for _, tau in pts]
        slope = fit_loglog_slope(dts, taus, spec.fit_window)
        slopes[scheme] = slope
        label = scheme if slope is None else f"{scheme} (slope {slope:.2f})"
        ax.loglog(dts, taus, marker="o", label=label)
    ax.set_xlabel(spec.xlabel or "timestep")
    ax.set_ylabel(spec.ylabel or "mean residence (steps)")
    ax.set_title(spec.title or "residence duration vs timestep")
    ax.legend()
    _save(fig, spec)
    return RenderResult(output=spec.output, slopes=slopes, series=len(by_scheme))


RENDERERS = {
    "histogram": plot_histogram,
    "rejection-bars": plot_rejection_bars,
    "residence-loglog": plot_residence,
}


def render(spec: FigureSpec) -> RenderResult:
    return RENDERERS[spec.kind](spec)
