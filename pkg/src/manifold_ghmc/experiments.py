"""Experiment harness and CLI.

Four experiments with machine-readable outputs: angle histogram against
the analytic torus reference, rejection-rate table, mean-residence-duration
sweep, and raw thinned trajectories. Output schemas are documented in
FORMATS.md; every file opens with a versioned provenance header.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import ChainAbort, InvalidParams, ManifoldGHMCError
from .integrator import RattleConfig, ReverseCheckMode
from .models import MODEL_REGISTRY, TorusParams, get_model
from .projection import NewtonConfig, NewtonCriterion
from .sampler import RejectionTally, SamplerConfig, Scheme, make_rng, run_chain

FORMAT_VERSION = "v1"

# thinning strides: wide enough that successive recorded states are nearly
# independent for the bundled experiments (calibrated on the torus at dt = 1)
DEFAULT_HISTOGRAM_THIN = 20
TRAJECTORY_MAX_POINTS = 100_000

TABLE_TIMESTEPS = (0.1, 0.3, 1.0)
TABLE_ALPHAS = (0.1, 0.5, 0.9)


class Experiment(Enum):
    HISTOGRAM = "histogram"
    REJECTION_TABLE = "rejection-table"
    RESIDENCE_SWEEP = "residence-sweep"
    TRAJECTORY = "trajectory"


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: Experiment
    model: str = "torus-zero"
    scheme: Scheme = Scheme.GHMC_LT
    dt: float = 1.0
    alpha: Optional[float] = None
    gamma: float = 1.0
    K: int = 1
    n_iter: int = 1_000_000
    seed: int = 0
    n_bins: int = 100
    reverse_check: ReverseCheckMode = ReverseCheckMode.FULL
    momentum_cap: Optional[float] = None
    sweep: tuple[float, ...] = ()
    thin: Optional[int] = None
    newton_criterion: NewtonCriterion = NewtonCriterion.MAX_RESIDUAL_INCREMENT
    out: Optional[Path] = None
    fmt: str = "csv"
    threads: int = 1

    def __post_init__(self):
        if self.model not in MODEL_REGISTRY:
            raise InvalidParams(f"--model: unknown model {self.model!r}")
        if self.dt <= 0.0:
            raise InvalidParams("--dt must be positive")
        if self.n_iter < 1:
            raise InvalidParams("--niter must be >= 1")
        if self.n_bins < 2:
            raise InvalidParams("--nbins must be >= 2")
        if self.thin is not None and self.thin < 1:
            raise InvalidParams("--thin must be >= 1")
        if self.fmt not in ("csv", "json"):
            raise InvalidParams(f"--format: unknown format {self.fmt!r}")
        if self.threads < 1:
            raise InvalidParams("--threads must be >= 1")
        if self.sweep and any(b <= a for a, b in zip(self.sweep, self.sweep[1:])):
            raise InvalidParams("--sweep values must be strictly increasing")
        if self.sweep and self.sweep[0] <= 0.0:
            raise InvalidParams("--sweep values must be positive")

    def sampler_config(self, dt: Optional[float] = None, alpha: Optional[float] = None,
                       seed: Optional[int] = None) -> SamplerConfig:
        scheme = self.scheme
        rattle = RattleConfig(
            dt=self.dt if dt is None else dt,
            use_forces=scheme is not Scheme.MRW,
            newton=NewtonConfig(criterion=self.newton_criterion),
            reverse_check=self.reverse_check,
        )
        a = self.alpha if alpha is None else alpha
        if scheme is Scheme.GHMC_LT and a is None:
            # fixed-friction parameterization: the mixing coefficient follows
            # the timestep, which is what makes GHMC a Langevin discretization
            a = math.exp(-self.gamma * rattle.dt)
        return SamplerConfig(
            scheme=scheme, rattle=rattle, gamma=self.gamma, alpha=a, K=self.K,
            momentum_cap=self.momentum_cap,
            seed=self.seed if seed is None else seed,
        )


# ---------------------------------------------------------------------------
# histogram experiment


def reference_bin_probabilities(edges: np.ndarray, params: TorusParams = TorusParams()) -> np.ndarray:
    """Exact integrals of the flat-measure angle density m(phi) over each bin.

    m(phi) = (1 + (r/R) cos phi) / (2 pi), the phi-marginal of the uniform
    surface measure on the torus.
    """
    return (np.diff(edges)
            + (params.r / params.R) * (np.sin(edges[1:]) - np.sin(edges[:-1]))) / (2.0 * math.pi)


@dataclass
class HistogramResult:
    edges: np.ndarray          # n_bins + 1 edges over [0, 2*pi)
    counts: np.ndarray
    density: np.ndarray
    ref_probability: Optional[np.ndarray]  # exact bin masses, flat measure only
    chi_square: Optional[float]
    p_value: Optional[float]
    n_samples: int
    thin: int
    tally: RejectionTally


def run_histogram(cfg: ExperimentConfig) -> HistogramResult:
    """Sample the torus and bin the angle phi against the analytic reference.

    The reference column (and the chi-square test) applies only when the
    target is the flat measure, where the phi-marginal is known exactly.
    """
    if not cfg.model.startswith("torus"):
        raise InvalidParams(f"--model: histogram experiment needs a torus model, got {cfg.model!r}")
    model = get_model(cfg.model)
    params = TorusParams()
    thin = DEFAULT_HISTOGRAM_THIN if cfg.thin is None else cfg.thin

    edges = np.linspace(0.0, 2.0 * math.pi, cfg.n_bins + 1)
    counts = np.zeros(cfg.n_bins, dtype=np.int64)
    width = edges[1] - edges[0]

    batch: list[np.ndarray] = []

    def sink(step, q, p, outcome):
        batch.append(q)

    _state, tally = run_chain(model, cfg.sampler_config(), cfg.n_iter, sink=sink, thin=thin)
    Q = np.asarray(batch)
    phi = np.mod(np.arctan2(Q[:, 2], np.hypot(Q[:, 0], Q[:, 1]) - params.R), 2.0 * math.pi)
    counts += np.histogram(phi, bins=edges)[0]

    n = int(counts.sum())
    density = counts / (n * width)

    ref = chi_sq = p_val = None
    if cfg.model == "torus-zero":
        ref = reference_bin_probabilities(edges, params)
        expected = n * ref
        chi_sq = float(((counts - expected) ** 2 / expected).sum())
        p_val = float(stats.chi2.sf(chi_sq, cfg.n_bins - 1))
    return HistogramResult(edges, counts, density, ref, chi_sq, p_val, n, thin, tally)


# ---------------------------------------------------------------------------
# rejection-rate table


@dataclass(frozen=True)
class TableRow:
    scheme: str
    dt: float
    alpha: Optional[float]
    n_iter: int
    total: float
    newton_forward: float
    newton_reverse: float
    non_reversible: float
    metropolis: float
    accepted: float

    def standard_error(self, rate: float) -> float:
        return math.sqrt(rate * (1.0 - rate) / self.n_iter)


def _table_cells(cfg: ExperimentConfig) -> list[tuple[str, float, Optional[float]]]:
    timesteps = cfg.sweep or TABLE_TIMESTEPS
    cells: list[tuple[str, float, Optional[float]]] = []
    for dt in timesteps:
        cells.append(("mrw", dt, None))
        cells.append(("mala", dt, None))
        for alpha in TABLE_ALPHAS:
            cells.append(("ghmc-lt", dt, alpha))
    return cells


def _run_table_cell(cfg: ExperimentConfig, index: int,
                    cell: tuple[str, float, Optional[float]]) -> TableRow:
    scheme_name, dt, alpha = cell
    scheme = Scheme(scheme_name)
    model = get_model(cfg.model)
    cell_cfg = replace(cfg, scheme=scheme, alpha=alpha)
    scfg = cell_cfg.sampler_config(dt=dt)
    # independent stream per cell: fork (seed, index) and run single-threaded
    from ._kernels import run_chain_fast

    if model.has_fast_path:
        rng = make_rng(cfg.seed, stream=index)
        p0 = np.zeros(model.d)
        _q, _p, counts, *_rest = run_chain_fast(model, scfg, cfg.n_iter,
                                                model.default_q0, p0, rng)
        tally = RejectionTally.from_counts(counts)
    else:
        _state, tally = run_chain(model, scfg, cfg.n_iter, engine="python")
    r = tally.rates()
    return TableRow(scheme_name, dt, alpha, cfg.n_iter,
                    total=1.0 - r["accepted"],
                    newton_forward=r["newton_forward"],
                    newton_reverse=r["newton_reverse"],
                    non_reversible=r["non_reversible"],
                    metropolis=r["metropolis"],
                    accepted=r["accepted"])


def run_rejection_table(cfg: ExperimentConfig) -> list[TableRow]:
    """Rejection-rate breakdown over the (scheme, dt, alpha) grid.

    Cells run on a thread pool with per-cell random streams derived from
    (seed, cell index); the returned rows are in grid order regardless of
    completion order.
    """
    cells = _table_cells(cfg)
    if cfg.threads == 1:
        return [_run_table_cell(cfg, i, c) for i, c in enumerate(cells)]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        futures = [pool.submit(_run_table_cell, cfg, i, c) for i, c in enumerate(cells)]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# residence-duration sweep


@dataclass(frozen=True)
class ResidenceEstimate:
    dt: float
    mean_residence: float      # tau-hat, in steps; nan when no switches occurred
    n_switches: int
    nonrev_rejection_rate: float

    @property
    def no_switches(self) -> bool:
        return self.n_switches == 0


def residence_from_positions(xs: Sequence[float], threshold: float) -> tuple[float, int]:
    """Mean steps between switches of the x-coordinate sequence.

    A switch at step n (1-based) happens when Theta * x_n < -threshold, with
    Theta starting at +1 and flipping at each switch. Returns (tau, K);
    tau is NaN when K = 0.
    """
    sign = 1.0
    n_switch = 0
    last = 0
    for i, x in enumerate(xs, start=1):
        if sign * x < -threshold:
            n_switch += 1
            last = i
            sign = -sign
    return (last / n_switch if n_switch else float("nan")), n_switch


def _run_residence_point(cfg: ExperimentConfig, index: int, dt: float) -> ResidenceEstimate:
    model = get_model(cfg.model)
    params = TorusParams()
    scfg = cfg.sampler_config(dt=dt)
    if model.has_fast_path:
        from ._kernels import run_chain_fast
        rng = make_rng(cfg.seed, stream=index)
        *_, counts, _rq, _rp, _ro, _ri, (n_switch, last_switch) = run_chain_fast(
            model, scfg, cfg.n_iter, model.default_q0, np.zeros(model.d), rng,
            residence=True, res_threshold=params.R)
        tally = RejectionTally.from_counts(counts)
    else:
        tracker = {"sign": 1.0, "n": 0, "last": 0}

        def sink(step, q, p, outcome):
            if tracker["sign"] * q[0] < -params.R:
                tracker["n"] += 1
                tracker["last"] = step
                tracker["sign"] = -tracker["sign"]

        _state, tally = run_chain(model, scfg, cfg.n_iter, sink=sink, thin=1,
                                  engine="python")
        n_switch, last_switch = tracker["n"], tracker["last"]
    tau = last_switch / n_switch if n_switch > 0 else float("nan")
    return ResidenceEstimate(dt, tau, n_switch,
                             tally.non_reversible / tally.attempts)


def run_residence_sweep(cfg: ExperimentConfig) -> list[ResidenceEstimate]:
    """Mean steps between metastable-state switches, one chain per timestep.

    A switch is a step where Theta * x < -R; Theta starts at +1 and flips
    at each switch. The estimate is the average gap between consecutive
    switch times, i.e. (last switch step) / (number of switches). Sweep
    points with zero switches are reported with NaN, not an error.
    """
    if not cfg.sweep:
        raise InvalidParams("--sweep is required for the residence-sweep experiment")
    points = list(enumerate(cfg.sweep))
    if cfg.threads == 1:
        return [_run_residence_point(cfg, i, dt) for i, dt in points]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        futures = [pool.submit(_run_residence_point, cfg, i, dt) for i, dt in points]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# trajectory experiment


@dataclass
class TrajectoryResult:
    steps: np.ndarray
    positions: np.ndarray
    outcomes: np.ndarray
    thin: int
    tally: RejectionTally


def run_trajectory(cfg: ExperimentConfig) -> TrajectoryResult:
    """Thinned raw trajectory; at most TRAJECTORY_MAX_POINTS states are kept."""
    model = get_model(cfg.model)
    thin = cfg.thin if cfg.thin is not None else max(1, cfg.n_iter // TRAJECTORY_MAX_POINTS)
    steps: list[int] = []
    positions: list[np.ndarray] = []
    outcomes: list[int] = []

    def sink(step, q, p, outcome):
        steps.append(step)
        positions.append(q)
        outcomes.append(outcome)

    _state, tally = run_chain(model, cfg.sampler_config(), cfg.n_iter, sink=sink, thin=thin)
    return TrajectoryResult(np.asarray(steps), np.asarray(positions),
                            np.asarray(outcomes, dtype=np.int64), thin, tally)


# ---------------------------------------------------------------------------
# output plumbing


def _provenance(cfg: ExperimentConfig) -> str:
    return (f"manifold-ghmc {FORMAT_VERSION}, experiment={cfg.experiment.value}, "
            f"seed={cfg.seed}, model={cfg.model}, scheme={cfg.scheme.value}, "
            f"niter={cfg.n_iter}")


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


def _rows_to_csv(cfg: ExperimentConfig, header: Sequence[str],
                 rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(f"# {_provenance(cfg)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _rows_to_json(cfg: ExperimentConfig, header: Sequence[str],
                  rows: Sequence[Sequence], extra: dict | None = None) -> str:
    doc = {
        "provenance": _provenance(cfg),
        "columns": list(header),
        "rows": [[None if v is None else v for v in row] for row in rows],
    }
    if extra:
        doc["summary"] = extra
    return json.dumps(doc, indent=2, allow_nan=False, default=float) + "\n"


def _serialize(cfg: ExperimentConfig, header, rows, extra=None) -> str:
    if cfg.fmt == "json":
        clean = [[None if (isinstance(v, float) and math.isnan(v)) else v for v in row]
                 for row in rows]
        return _rows_to_json(cfg, header, clean, extra)
    return _rows_to_csv(cfg, header, rows)


def histogram_output(cfg: ExperimentConfig, res: HistogramResult) -> str:
    header = ["bin_lo", "bin_hi", "count", "density", "ref_probability", "ref_density"]
    width = res.edges[1] - res.edges[0]
    rows = []
    for i in range(len(res.counts)):
        ref_p = None if res.ref_probability is None else float(res.ref_probability[i])
        ref_d = None if ref_p is None else ref_p / width
        rows.append([float(res.edges[i]), float(res.edges[i + 1]), int(res.counts[i]),
                     float(res.density[i]), ref_p, ref_d])
    extra = {"chi_square": res.chi_square, "p_value": res.p_value,
             "n_samples": res.n_samples, "thin": res.thin}
    return _serialize(cfg, header, rows, extra)


def table_output(cfg: ExperimentConfig, rows: list[TableRow]) -> str:
    header = ["scheme", "dt", "alpha", "n_iter", "total", "newton_forward",
              "newton_reverse", "non_reversible", "metropolis", "accepted",
              "se_total", "se_newton_forward", "se_newton_reverse",
              "se_non_reversible", "se_metropolis"]
    out = []
    for r in rows:
        out.append([r.scheme, r.dt, r.alpha, r.n_iter, r.total, r.newton_forward,
                    r.newton_reverse, r.non_reversible, r.metropolis, r.accepted,
                    r.standard_error(r.total), r.standard_error(r.newton_forward),
                    r.standard_error(r.newton_reverse), r.standard_error(r.non_reversible),
                    r.standard_error(r.metropolis)])
    return _serialize(cfg, header, out)


def residence_output(cfg: ExperimentConfig, rows: list[ResidenceEstimate]) -> str:
    header = ["scheme", "dt", "mean_residence", "n_switches", "nonrev_rejection_rate"]
    out = [[cfg.scheme.value, r.dt, r.mean_residence, r.n_switches,
            r.nonrev_rejection_rate] for r in rows]
    return _serialize(cfg, header, out)


def trajectory_output(cfg: ExperimentConfig, res: TrajectoryResult) -> str:
    header = ["step", "x", "y", "z", "outcome"]
    rows = [[int(res.steps[i])] + [float(v) for v in res.positions[i]]
            + [int(res.outcomes[i])] for i in range(res.steps.shape[0])]
    extra = {"thin": res.thin}
    return _serialize(cfg, header, rows, extra)


# ---------------------------------------------------------------------------
# CLI


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="manifold-ghmc",
        description="Constrained HMC/GHMC sampling experiments on submanifolds.")
    p.add_argument("--experiment", required=True,
                   choices=[e.value for e in Experiment])
    p.add_argument("--model", default="torus-zero", choices=sorted(MODEL_REGISTRY))
    p.add_argument("--scheme", default="ghmc-lt", choices=[s.value for s in Scheme])
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--k-steps", type=int, default=1, dest="k_steps")
    p.add_argument("--niter", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nbins", type=int, default=100)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--reverse-check", default="full",
                   choices=[m.value for m in ReverseCheckMode])
    p.add_argument("--newton-criterion", default="max",
                   choices=[c.value for c in NewtonCriterion])
    p.add_argument("--momentum-cap", type=float, default=None)
    p.add_argument("--sweep", type=str, default="",
                   help="comma-separated strictly increasing timesteps")
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--format", default="csv", choices=["csv", "json"], dest="fmt")
    p.add_argument("--threads", type=int, default=1)
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    sweep: tuple[float, ...] = ()
    if args.sweep:
        try:
            sweep = tuple(float(s) for s in args.sweep.split(","))
        except ValueError:
            raise InvalidParams(f"--sweep: cannot parse {args.sweep!r}") from None
    threads = args.threads
    env_threads = os.environ.get("MANIFOLD_GHMC_THREADS")
    if env_threads is not None:
        try:
            threads = int(env_threads)
        except ValueError:
            raise InvalidParams(f"MANIFOLD_GHMC_THREADS: cannot parse {env_threads!r}") from None
    return ExperimentConfig(
        experiment=Experiment(args.experiment),
        model=args.model,
        scheme=Scheme(args.scheme),
        dt=args.dt,
        alpha=args.alpha,
        gamma=args.gamma,
        K=args.k_steps,
        n_iter=args.niter,
        seed=args.seed,
        n_bins=args.nbins,
        thin=args.thin,
        reverse_check=ReverseCheckMode(args.reverse_check),
        newton_criterion=NewtonCriterion(args.newton_criterion),
        momentum_cap=args.momentum_cap,
        sweep=sweep,
        out=None if args.out is None else Path(args.out),
        fmt=args.fmt,
        threads=max(1, threads),
    )


def _dispatch(cfg: ExperimentConfig) -> tuple[str, str]:
    if cfg.experiment is Experiment.HISTOGRAM:
        res = run_histogram(cfg)
        summary = (f"histogram: n={res.n_samples} bins={cfg.n_bins}"
                   + (f" chi2={res.chi_square:.1f} p={res.p_value:.4g}"
                      if res.chi_square is not None else ""))
        return histogram_output(cfg, res), summary
    if cfg.experiment is Experiment.REJECTION_TABLE:
        rows = run_rejection_table(cfg)
        return table_output(cfg, rows), f"rejection-table: {len(rows)} rows"
    if cfg.experiment is Experiment.RESIDENCE_SWEEP:
        rows = run_residence_sweep(cfg)
        n_empty = sum(r.no_switches for r in rows)
        summary = f"residence-sweep: {len(rows)} points"
        if n_empty:
            summary += f" ({n_empty} with no switches)"
        return residence_output(cfg, rows), summary
    res = run_trajectory(cfg)
    return trajectory_output(cfg, res), f"trajectory: {res.steps.shape[0]} states"


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        cfg = config_from_args(args)
        text, summary = _dispatch(cfg)
    except InvalidParams as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ChainAbort, ManifoldGHMCError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    if cfg.out is not None:
        _atomic_write(cfg.out, text)
        print(f"{summary} -> {cfg.out}")
    else:
        sys.stdout.write(text)
        print(summary, file=sys.stderr)
    return 0


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
