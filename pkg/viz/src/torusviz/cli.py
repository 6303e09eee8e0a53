"""Command-line entry: torusviz render --kind K --in FILES --out PNG."""

from __future__ import annotations

import argparse
import sys

from .loading import SCHEMAS, SchemaError
from .render import FigureSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="torusviz",
                                     description="render torusflow output files")
    subs = parser.add_subparsers(dest="command", required=True)
    r = subs.add_parser("render", help="render one figure")
    r.add_argument("--kind", required=True, choices=sorted(SCHEMAS),
                   help="figure kind")
    r.add_argument("--in", dest="inputs", required=True, nargs="+",
                   help="input CSV/JSONL file(s)")
    r.add_argument("--out", required=True, help="output image path")
    r.add_argument("--title", default="", help="figure title override")
    r.add_argument("--label", action="append", default=[],
                   help="legend label per input (repeatable)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(kind=args.kind, inputs=args.inputs, output=args.out,
                          title=args.title, labels=args.label)
        out = render(spec)
    except SchemaError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
