"""Command-line front door: ``neumann-opt {train,compare,eigenprobe,gradcheck}``.

Exit status: 0 success, 1 other failure, 2 config error, 3 divergence.
"""
from __future__ import annotations

import argparse
import glob
import logging
import sys

from .checkpoint import CheckpointError
from .harness.config import ConfigError, parse_config, with_overrides
from .harness.train import build_problem, gradcheck, run_compare, run_eigenprobe, run_train

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _load(path, args):
    cfg = parse_config(path)
    return with_overrides(cfg, seed=args.seed, output_dir=args.out_dir, deterministic=args.deterministic)


def cmd_train(args) -> int:
    cfg = _load(args.config, args)
    res = run_train(cfg)
    s = res.summary
    print(f"{s['name']}: {s['status']} after {s['total_steps']} steps; "
          f"train loss {s['final_train_loss']}, eval loss {s['final_eval_loss']}, eval acc {s['final_eval_acc']}")
    print(f"metrics: {res.metrics_path}")
    return EXIT_OK if res.status == "completed" else EXIT_DIVERGED


def cmd_compare(args) -> int:
    cfgs = [_load(p, args) for p in args.configs]
    report = run_compare(cfgs)
    print(report.summary, end="")
    print(f"curves: {report.table_path}")
    return EXIT_OK if all(r.status == "completed" for r in report.results) else EXIT_DIVERGED


def cmd_eigenprobe(args) -> int:
    cfg = _load(args.config, args)
    paths = sorted(glob.glob(args.checkpoints))
    records, out = run_eigenprobe(cfg, paths, args.k)
    for r in records:
        print(f"step {r.step}: lambda_min {r.lambda_min_est:.6g}  lambda_max {r.lambda_max_est:.6g}")
    print(f"probe: {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _load(args.config, args)
    model, data = build_problem(cfg)
    rep = gradcheck(model, data, points=args.points, seed=cfg.seed, batch_size=cfg.batch_size)
    for i, (ge, he) in enumerate(zip(rep.grad_errors, rep.hvp_errors)):
        print(f"point {i}: grad rel err {ge:.3e}  hvp rel err {he:.3e}")
    print("PASS" if rep.passed else "FAIL")
    return EXIT_OK if rep.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out-dir", default=None, help="override output_dir")
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                        help="force deterministic mode on or off")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="neumann-opt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="run one experiment")
    p.add_argument("config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", parents=[common], help="run several configs on one problem")
    p.add_argument("configs", nargs="*")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("eigenprobe", parents=[common], help="Lanczos extremal eigenvalues of checkpoints")
    p.add_argument("config")
    p.add_argument("--checkpoints", required=True, help="glob of checkpoint files")
    p.add_argument("--k", type=int, default=None, help="Lanczos iterations (default: probe.k or 10)")
    p.set_defaults(func=cmd_eigenprobe)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient/HVP checks")
    p.add_argument("config")
    p.add_argument("--points", type=int, default=10)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
