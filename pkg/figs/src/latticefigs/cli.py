"""Command line: one figure per invocation from CSV inputs.

Exit codes: 0 success, 2 usage or input-schema error.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .figures import (MPS_PER_P, TAU_TO_US, RENDERERS, SchemaError,
                      sweep_curves)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latticefigs",
        description="Render simulation figures (fig1..fig5) from CSV files.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("figure", choices=sorted(RENDERERS),
                        help="fig1: H and u traces from events CSVs; "
                             "fig2: D(H) comparison from diffusion CSVs; "
                             "fig3: flight PDFs from pdf CSVs; "
                             "fig4: velocity traces from events CSVs; "
                             "fig5: sweep curves from one sweep CSV")
    parser.add_argument("csv", nargs="+", help="input CSV path(s)")
    parser.add_argument("--out", help="output image path "
                                      "(default: <figure>.png)")
    parser.add_argument("--labels", nargs="*",
                        help="series labels, one per input CSV")
    parser.add_argument("--tau-to-us", type=float, default=TAU_TO_US,
                        help="microseconds per scaled time unit "
                             "(default %(default)g)")
    parser.add_argument("--mps-per-p", type=float, default=MPS_PER_P,
                        help="m/s per recoil momentum (default %(default)g)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out or f"{args.figure}.png"
    try:
        if args.figure == "fig5":
            if len(args.csv) != 1:
                print("fig5 takes exactly one sweep CSV", file=sys.stderr)
                return 2
            sweep_curves(args.csv[0], out=out)
        elif args.figure == "fig1":
            RENDERERS["fig1"](args.csv, out=out, labels=args.labels,
                              tau_to_us=args.tau_to_us)
        elif args.figure == "fig4":
            RENDERERS["fig4"](args.csv, out=out, labels=args.labels,
                              tau_to_us=args.tau_to_us,
                              mps_per_p=args.mps_per_p)
        else:
            RENDERERS[args.figure](args.csv, out=out, labels=args.labels)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
