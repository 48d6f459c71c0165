"""plotkit command line: curves from a JSON spec, ablation panels from a
study directory."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import HeaderMismatch, load_curve_spec, render_ablation, render_curves


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plotkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_curves = sub.add_parser("curves", help="render reward curves from a spec file")
    p_curves.add_argument("--spec", required=True, type=Path, help="curve spec JSON")
    p_curves.add_argument("--out", type=Path, default=None, help="output image (overrides spec)")

    p_abl = sub.add_parser("ablation", help="render ablation panels from a study directory")
    p_abl.add_argument("--dir", required=True, type=Path)
    p_abl.add_argument("--out", required=True, type=Path)
    p_abl.add_argument("--x-axis", default="env_steps", choices=("env_steps", "wall_clock_s"))
    p_abl.add_argument("--smooth", type=int, default=1)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "curves":
            out = render_curves(load_curve_spec(args.spec), args.out)
        else:
            out = render_ablation(args.dir, args.out, x_axis=args.x_axis, smoothing_window=args.smooth)
    except (FileNotFoundError, HeaderMismatch, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
