"""Command-line entry point: render one figure from CSV result files."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import KINDS, FigureSpec, render
from .reader import SchemaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manifold-ghmc-plots",
        description="Render a figure from manifold-ghmc CSV output files.")
    parser.add_argument("--in", dest="inputs", action="append", required=True,
                        metavar="CSV", help="input CSV (repeatable for "
                        "residence-loglog overlays)")
    parser.add_argument("--kind", choices=KINDS, required=True)
    parser.add_argument("--out", required=True, metavar="IMAGE")
    parser.add_argument("--title")
    parser.add_argument("--xlabel")
    parser.add_argument("--ylabel")
    parser.add_argument("--fit-min", type=float, default=None,
                        help="lower timestep bound of the slope-fit window")
    parser.add_argument("--fit-max", type=float, default=None,
                        help="upper timestep bound of the slope-fit window")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    window = None
    if args.fit_min is not None or args.fit_max is not None:
        window = (args.fit_min if args.fit_min is not None else 0.0,
                  args.fit_max if args.fit_max is not None else float("inf"))
    try:
        spec = FigureSpec(
            inputs=tuple(Path(p) for p in args.inputs),
            kind=args.kind,
            output=Path(args.out),
            title=args.title,
            xlabel=args.xlabel,
            ylabel=args.ylabel,
            fit_window=window,
        )
        result = render(spec)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    notes = [f"{result.series} series"]
    for scheme, slope in sorted(result.slopes.items()):
        notes.append(f"{scheme} slope "
                     + ("not fitted (fewer than 3 points)" if slope is None
                        else f"{slope:.2f}"))
    print(f"wrote {result.output} ({'; '.join(notes)})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
