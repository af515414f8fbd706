"""Trace growth of the boundary and residual kernels with the scale factor.

    python scripts/run_ntk.py --budget desk    # width 4096, slopes only
    python scripts/run_ntk.py --budget paper   # width 40000, plus closed-form points
"""
import argparse
from pathlib import Path

from vspinn.cli import parse_config, run_ntk


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--budget", choices=("desk", "paper"), default="desk")
    ap.add_argument("--out")
    ap.add_argument("--width", type=int)
    ap.add_argument("--seeds", type=int)
    args = ap.parse_args(argv)
    text = f"preset = ntk_{args.budget}\n"
    if args.width:
        text += f"ntk_width = {args.width}\n"
    if args.seeds:
        text += f"ntk_seeds = {args.seeds}\n"
    out = Path(args.out or f"runs/ntk_{args.budget}")
    res = run_ntk(parse_config(text), out)
    print((out / "ntk_report.txt").read_text(), end="")
    return res


if __name__ == "__main__":
    main()
