"""Navier-Stokes cylinder flow: train, then measure residual, boundary and mass RMS.

There is no reference flow field, so the run is judged by properties on a
dense grid: how far the residual falls from its value at initialization,
how well the boundary conditions hold, and how small u_x + v_y is.

    python scripts/run_navier_stokes.py --budget desk --out runs/ns
"""
import argparse
import json
import time
from pathlib import Path

from vspinn.cli import parse_config, property_report, run_train
from vspinn.network import init_params, load_checkpoint


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--budget", choices=("desk", "paper"), default="desk")
    ap.add_argument("--out", default="runs/navier_stokes")
    ap.add_argument("--epochs", type=int, help="override the preset's epoch count")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    text = f"preset = navier_stokes_{args.budget}\nseed = {args.seed}\n"
    if args.epochs is not None:
        text += f"epochs = {args.epochs}\n"
    cfg = parse_config(text)
    out = Path(args.out)
    start = time.perf_counter()
    run_train(cfg, out)
    spec = cfg.spec()
    before = property_report(spec, init_params(cfg.net_config(spec)))
    after = property_report(spec, load_checkpoint(out / "checkpoint.txt"))
    report = {
        "residual_drop": before["residual_rms"] / after["residual_rms"],
        "initial": before,
        "final": after,
        "wall_time_s": time.perf_counter() - start,
    }
    (out / "properties.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(f"residual RMS {before['residual_rms']:.4g} -> {after['residual_rms']:.4g} "
          f"(drop {report['residual_drop']:.1f}x)")
    print(f"boundary RMS {after['bc_rms']:.4g}, mass RMS {after['first_residual_rms']:.4g}")
    return report


if __name__ == "__main__":
    main()
