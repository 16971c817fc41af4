"""Tests for the figure-generation package.

All inputs are committed fixture CSVs; no sampler code runs here — the CSV
files are the only interface to the simulation package.
"""

import math
from pathlib import Path

import pytest

from manifold_ghmc_plots import (
    FigureSpec,
    SchemaError,
    fit_loglog_slope,
    read_table,
    render,
)
from manifold_ghmc_plots.cli import main

FIXTURES = Path(__file__).parent / "fixtures"


def spec(kind, out, *names, **kwargs):
    return FigureSpec(inputs=tuple(FIXTURES / n for n in names),
                      kind=kind, output=out, **kwargs)


# ---------------------------------------------------------------- reader


def test_read_table_provenance_and_rows():
    table = read_table(FIXTURES / "residence_power.csv")
    assert table.provenance["experiment"] == "residence-sweep"
    assert table.columns[:2] == ("scheme", "dt")
    assert len(table.rows) == 5
    assert table.floats("dt")[0] == 0.02


def test_missing_header_rejected():
    with pytest.raises(SchemaError, match="provenance header"):
        read_table(FIXTURES / "not_versioned.csv")


def test_missing_column_rejected():
    table = read_table(FIXTURES / "residence_power.csv")
    with pytest.raises(SchemaError, match="no_such"):
        table.floats("no_such")


def test_empty_fields_become_nan():
    table = read_table(FIXTURES / "residence_nan.csv")
    taus = table.floats("mean_residence")
    assert math.isnan(taus[0]) and not math.isnan(taus[1])


# ------------------------------------------------------------- histogram


def test_histogram_with_reference_curve(tmp_path):
    out = tmp_path / "hist.png"
    result = render(spec("histogram", out, "hist_flat.csv"))
    assert out.exists() and result.series == 2


def test_histogram_without_reference_curve(tmp_path):
    result = render(spec("histogram", tmp_path / "h.png", "hist_quadratic.csv"))
    assert result.series == 1


def test_histogram_rejects_wrong_experiment(tmp_path):
    with pytest.raises(SchemaError, match="experiment"):
        render(spec("histogram", tmp_path / "h.png", "residence_power.csv"))


# -------------------------------------------------------- rejection bars


def test_rejection_bars(tmp_path):
    out = tmp_path / "bars.png"
    result = render(spec("rejection-bars", out, "rejection_small.csv"))
    assert out.exists() and result.series == 5
    table = read_table(FIXTURES / "rejection_small.csv")
    for col in ("total", "newton_forward", "metropolis", "accepted"):
        assert all(0.0 <= v <= 1.0 for v in table.floats(col))


# ------------------------------------------------------------- residence


def test_power_law_slope_annotation(tmp_path):
    """An exact tau = C/dt^2 fixture must be annotated with slope -2.00."""
    result = render(spec("residence-loglog", tmp_path / "r.png",
                         "residence_power.csv"))
    assert abs(result.slopes["mala"] - (-2.0)) <= 0.01


def test_two_points_fit_refused_plot_still_written(tmp_path):
    out = tmp_path / "r.png"
    result = render(spec("residence-loglog", out, "residence_two_points.csv"))
    assert result.slopes["mala"] is None
    assert out.exists()


def test_mixed_schemes_one_line_each(tmp_path):
    result = render(spec("residence-loglog", tmp_path / "r.png",
                         "residence_mixed.csv"))
    assert result.series == 2
    assert abs(result.slopes["mala"] - (-2.0)) <= 0.01
    assert abs(result.slopes["ghmc-lt"] - (-1.0)) <= 0.01


def test_multiple_inputs_overlay(tmp_path):
    result = render(spec("residence-loglog", tmp_path / "r.png",
                         "residence_power.csv", "residence_real.csv"))
    assert result.series == 1  # same scheme: points merged into one line


def test_nan_points_excluded_from_fit(tmp_path):
    result = render(spec("residence-loglog", tmp_path / "r.png",
                         "residence_nan.csv"))
    assert abs(result.slopes["mala"] - (-2.0)) <= 0.01


def test_fit_window_restricts_points(tmp_path):
    result = render(spec("residence-loglog", tmp_path / "r.png",
                         "residence_mixed.csv", fit_window=(0.03, 0.1)))
    assert abs(result.slopes["mala"] - (-2.0)) <= 0.01
    # only two points below 0.04: fit refused
    narrow = render(spec("residence-loglog", tmp_path / "r2.png",
                         "residence_mixed.csv", fit_window=(0.0, 0.04)))
    assert narrow.slopes["mala"] is None


def test_fit_loglog_slope_exact():
    dts = [0.1, 0.2, 0.4, 0.8]
    assert abs(fit_loglog_slope(dts, [1.0 / d**2 for d in dts]) + 2.0) < 1e-12
    assert fit_loglog_slope(dts[:2], [1.0, 2.0]) is None


# ------------------------------------------------------------ stability


@pytest.mark.parametrize("kind,name", [
    ("histogram", "hist_flat.csv"),
    ("rejection-bars", "rejection_small.csv"),
    ("residence-loglog", "residence_mixed.csv"),
])
def test_byte_stable_output(tmp_path, kind, name):
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    render(spec(kind, a, name))
    render(spec(kind, b, name))
    assert a.read_bytes() == b.read_bytes()


# ------------------------------------------------------------------ CLI


def test_cli_renders_figure(tmp_path, capsys):
    out = tmp_path / "fig.png"
    code = main(["--in", str(FIXTURES / "residence_power.csv"),
                 "--kind", "residence-loglog", "--out", str(out)])
    assert code == 0 and out.exists()
    assert "slope -2.00" in capsys.readouterr().out


def test_cli_schema_error_exits_2(tmp_path, capsys):
    code = main(["--in", str(FIXTURES / "not_versioned.csv"),
                 "--kind", "histogram", "--out", str(tmp_path / "f.png")])
    assert code == 2
    assert "provenance" in capsys.readouterr().err


def test_cli_missing_file_exits_2(tmp_path):
    code = main(["--in", str(tmp_path / "absent.csv"),
                 "--kind", "histogram", "--out", str(tmp_path / "f.png")])
    assert code == 2
