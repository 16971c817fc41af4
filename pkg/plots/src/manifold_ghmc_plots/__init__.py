"""Figure generation for manifold-ghmc CSV results (separate package; the
only interface to the sampler is the versioned CSV format)."""

from .figures import (
    KINDS,
    FigureSpec,
    RenderResult,
    fit_loglog_slope,
    plot_histogram,
    plot_rejection_bars,
    plot_residence,
    render,
)
from .reader import SchemaError, Table, read_table, require_experiment

__version__ = "0.1.0"

__all__ = [
    "KINDS",
    "FigureSpec",
    "RenderResult",
    "SchemaError",
    "Table",
    "fit_loglog_slope",
    "plot_histogram",
    "plot_rejection_bars",
    "plot_residence",
    "read_table",
    "render",
    "require_experiment",
    "__version__",
]
