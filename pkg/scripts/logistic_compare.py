"""Excess loss over the Newton optimum after 50 epochs of logistic regression.

Runs Neumann over a small learning-rate grid next to the momentum baseline.

    python3 scripts/logistic_compare.py [--out-dir runs/logistic]
"""
import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from neumann_opt.harness import build_problem, parse_config, run_compare
from neumann_opt.linalg import dense_solve
from neumann_opt.models import MiniBatch

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def newton_min(model, batch, w, iters=50):
    for _ in range(iters):
        g = model.gradient(w, batch)
        if np.linalg.norm(g) < 1e-12:
            break
        w = w - dense_solve(model.hessian(w, batch), g)
    return model.loss(w, batch)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="runs/logistic")
    args = ap.parse_args()

    neu = parse_config(CONFIGS / "logistic_neumann.cfg")
    mom = parse_config(CONFIGS / "logistic_momentum.cfg")
    runs = [replace(neu, name=f"neumann_lr{lr:g}", lr=replace(neu.lr, base=lr)) for lr in (0.05, 0.1, 0.2)]
    runs.append(mom)
    rep = run_compare(runs, out_dir=args.out_dir)

    model, data = build_problem(neu)
    full = MiniBatch.full(data)
    f_star = newton_min(model, full, np.zeros(model.param_count))
    print(f"f* = {f_star:.12f}")
    for r in rep.results:
        print(f"{r.summary['name']:>16s}  {r.status:9s}  excess = {model.loss(r.weights, full) - f_star:.3e}")


if __name__ == "__main__":
    main()
