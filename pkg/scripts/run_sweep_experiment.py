"""Scale sweeps for the wave, Allen-Cahn, boundary-layer and Poisson experiments.

Each experiment runs its preset once per scale factor and prints the final
errors next to each other.

    python scripts/run_sweep_experiment.py wave --budget desk --out runs/wave
    python scripts/run_sweep_experiment.py poisson --scales 1,2,4,1000
"""
import argparse
from pathlib import Path

from vspinn.cli import parse_config, run_sweep

EXPERIMENTS = ("wave", "allen_cahn", "boundary_layer", "poisson")


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--budget", choices=("desk", "paper"), default="desk")
    ap.add_argument("--out")
    ap.add_argument("--scales", help="comma list overriding the preset's scale factors")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    text = f"preset = {args.experiment}_{args.budget}\nseed = {args.seed}\nworkers = {args.workers}\n"
    if args.scales:
        text += f"scales = {args.scales}\n"
    if args.epochs is not None:
        text += f"epochs = {args.epochs}\n"
    cfg = parse_config(text)
    out = Path(args.out or f"runs/{args.experiment}_{args.budget}")
    results = run_sweep(cfg, out)
    for m in results:
        err = m["final_rel_l2"]
        print(f"N={m['N']:>8g}  final rel L2 {'NA' if err is None else f'{err:.4g}'}  ({m['wall_time_s']:.0f} s)")
    print(f"comparison table: {out / 'comparison.csv'}")
    return results


if __name__ == "__main__":
    main()
