"""Train the tiny MLP with SGD, then track the extremal Hessian eigenvalues along its checkpoints.

    python3 scripts/mlp_eigen_trajectory.py [--out-dir runs/mlp] [--k 10]
"""
import argparse
from dataclasses import replace
from pathlib import Path

from neumann_opt.harness import parse_config, run_eigenprobe, run_train

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="runs/mlp")
    ap.add_argument("--k", type=int, default=None)
    args = ap.parse_args()

    cfg = replace(parse_config(CONFIGS / "mlp_sgd_probe.cfg"), output_dir=args.out_dir)
    res = run_train(cfg)
    print(f"training {res.status}: final train acc {res.summary['final_train_acc']:.4f}")
    records, out = run_eigenprobe(cfg, res.checkpoints, k=args.k)
    print(f"{'step':>6s} {'lambda_min':>12s} {'lambda_max':>12s}")
    for r in records:
        print(f"{r.step:6d} {r.lambda_min_est:12.4e} {r.lambda_max_est:12.4e}")
    print(f"probe table: {out}")


if __name__ == "__main__":
    main()
