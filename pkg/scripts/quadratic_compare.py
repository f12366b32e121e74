"""Steps to reach loss 1e-6 on the ill-conditioned quadratic: Neumann vs a tuned SGD grid.

    python3 scripts/quadratic_compare.py [--out-dir runs/quadratic]
"""
import argparse
from dataclasses import replace
from pathlib import Path

from neumann_opt.harness import parse_config, run_compare

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="runs/quadratic")
    args = ap.parse_args()

    neu = parse_config(CONFIGS / "quadratic_neumann.cfg")
    sgd = parse_config(CONFIGS / "quadratic_sgd.cfg")
    runs = [replace(neu, name=f"neumann_lr{lr:g}", lr=replace(neu.lr, base=lr)) for lr in (0.5, 1.0, 1.5)]
    runs += [replace(sgd, name=f"sgd_lr{lr:g}", lr=replace(sgd.lr, base=lr)) for lr in (0.5, 1.0, 1.5, 1.9, 1.99)]
    rep = run_compare(runs, out_dir=args.out_dir)
    print(rep.summary, end="")
    print(f"loss curves: {rep.table_path}")


if __name__ == "__main__":
    main()
