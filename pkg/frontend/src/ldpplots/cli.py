"""Render figures from a pipeline output directory.

    ldpdebias-plot convergence --in runs/exp --out figs/convergence.svg
    ldpdebias-plot averaged    --in runs/exp --out figs/averaged.svg
    ldpdebias-plot truncation  --in runs/exp --out figs/truncation.svg --log

Inputs are discovered inside --in by the pipeline's artifact names
(trace_{method}_seed*.csv, summary_{method}.csv, bias_scan.csv) and are
only ever read. A suffixless --out gets ".svg"; any suffix matplotlib
understands works. Exit codes: 0 success, 2 usage error, 3 missing or
malformed input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import matplotlib

from .figures import KINDS, FigureSpec, render
from .io import PlotInputError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldpdebias-plot",
        description="render figures from ldpdebias CSV artifacts",
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    helps = {
        "convergence": "per-method test-risk curves with across-seed bands",
        "averaged": "fitted-model vs averaged-model final risk",
        "truncation": "series truncation bias, one curve per order",
    }
    for kind in KINDS:
        cmd = sub.add_parser(kind, help=helps[kind])
        cmd.add_argument("--in", dest="in_dir", required=True, metavar="DIR",
                         help="pipeline output directory to read")
        cmd.add_argument("--out", required=True, metavar="FILE",
                         help="image file to write")
        cmd.add_argument("--xlabel", help="override the x-axis label")
        cmd.add_argument("--ylabel", help="override the y-axis label")
        cmd.add_argument("--log", action="store_true",
                         help="log-scale the value axis")
    return parser


def main(argv=None) -> int:
    matplotlib.use("Agg")
    args = _build_parser().parse_args(argv)
    try:
        spec = FigureSpec.from_dir(
            args.kind,
            Path(args.in_dir),
            Path(args.out),
            xlabel=args.xlabel,
            ylabel=args.ylabel,
            log_scale=args.log,
        )
        path = render(spec)
    except PlotInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
