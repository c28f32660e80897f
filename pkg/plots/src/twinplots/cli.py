"""twinplots CLI: render one figure kind from exported experiment files."""
from __future__ import annotations

import argparse
import sys

from .figures import FIGURE_KINDS, FigureSpec


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="twinplots")
    parser.add_argument("--kind", choices=FIGURE_KINDS, required=True)
    parser.add_argument(
        "--in", dest="inputs", nargs="+", required=True,
        help="input files; CSV for the *_vs_load kinds, JSON documents for "
             "perlink_scatter (prediction, simresult) and queue_vs_overload "
             "(twin prediction plus one or more simresults, any order)",
    )
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        FigureSpec(kind=args.kind, inputs=args.inputs, out=args.out).render()
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
