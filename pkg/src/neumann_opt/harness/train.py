"""Training loop, optimizer comparison, eigenvalue probing and gradient checks."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import baselines
from ..baselines import LrSchedule, NonFiniteGradient
from ..checkpoint import atomic_write_text, write_checkpoint
from ..lanczos import trajectory_probe, write_probe_csv
from ..linalg import RngStream, finite_diff_grad, finite_diff_hvp
from ..models import (EpochSampler, MiniBatch, LogisticModel, MLPModel, load_csv,
                      make_logistic_problem, make_mlp_problem, make_quadratic_problem)
from ..neumann import Divergence, NeumannOptimizer
from .config import ConfigError, ExperimentConfig

log = logging.getLogger(__name__)

METRICS_HEADER = ["step", "epoch", "train_loss", "eval_loss", "eval_acc", "lr", "mu",
                  "grad_norm", "update_norm", "wall_ms"]


def build_problem(cfg: ExperimentConfig):
    p = cfg.problem
    seed = cfg.problem_seed
    if p.data_path:
        data = load_csv(p.data_path)
        if p.family == "logistic":
            return LogisticModel(data), data
        if p.family == "mlp":
            return MLPModel(data, p.hidden_width), data
        raise ConfigError("problem.data_path is only supported for logistic and mlp problems")
    if p.family == "quadratic":
        return make_quadratic_problem(p.resolved_spectrum(), p.w_star, p.noise or 0.0, p.n_samples, seed)
    if p.family == "logistic":
        return make_logistic_problem(p.feature_dim, p.n_samples, p.separation, seed)
    if p.noise is None:
        return make_mlp_problem(p.feature_dim, p.hidden_width, p.n_samples, seed)
    return make_mlp_problem(p.feature_dim, p.hidden_width, p.n_samples, seed, noise=p.noise)


def split_indices(N: int, eval_fraction: float, seed: int):
    """Seeded shuffle; the last ceil(eval_fraction*N) indices form the eval split."""
    perm = RngStream(seed).substream("split").permutation(N)
    n_eval = math.ceil(eval_fraction * N)
    if n_eval >= N:
        raise ConfigError(f"eval_fraction {eval_fraction} leaves no training samples")
    return np.sort(perm[: N - n_eval]), np.sort(perm[N - n_eval:])


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


@dataclass
class RunResult:
    config: ExperimentConfig
    weights: np.ndarray
    rows: list[dict]
    summary: dict
    status: str = "completed"
    run_dir: Path | None = None
    metrics_path: Path | None = None
    checkpoint_path: Path | None = None
    checkpoints: list[Path] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 0 if self.status == "completed" else 3

    def metrics_csv(self) -> str:
        return format_metrics(self.rows)


def format_metrics(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow([_fmt(r.get(k)) for k in METRICS_HEADER])
    return buf.getvalue()


class _Stepper:
    """Uniform step interface over the Neumann driver and the baselines."""

    def __init__(self, cfg: ExperimentConfig, w0, schedule: LrSchedule):
        self.cfg = cfg
        self.schedule = schedule
        if cfg.optimizer == "neumann":
            self.neumann = NeumannOptimizer(w0, cfg.neumann, schedule)
        else:
            self.neumann = None
            self.state = baselines.init_state(cfg.optimizer, w0.size, **cfg.baseline)
            self.w = w0.copy()
        self.t = 0
        self.lr = self.mu = self.grad_norm = None

    @property
    def params(self) -> np.ndarray:
        return self.neumann.params if self.neumann else self.w

    def step(self, model, batch):
        self.t += 1
        if self.neumann:
            s = self.neumann.step(model, batch)
            self.lr = self.neumann.current_lr()
            self.mu = s.mu if s.phase == "main" and s.main_t > 0 else None
            self.grad_norm = s.grad_norm
            return
        g = model.gradient(self.w, batch)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"step {self.t}: non-finite gradient")
        self.lr = baselines.lr_at(self.schedule, self.t)
        self.state, self.w = baselines.step(self.state, self.w, g, self.lr)
        self.mu = self.state.hyper.get("mu")
        self.grad_norm = float(np.linalg.norm(g))


def make_schedule(cfg: ExperimentConfig, steps_per_epoch: int) -> LrSchedule:
    lr = cfg.lr
    base = lr.base
    if lr.reference_batch:
        base = baselines.linear_scaled_lr(base, cfg.batch_size, lr.reference_batch)
    warmup = lr.warmup_epochs
    if warmup is None:
        warmup = cfg.neumann.burnin_epochs if cfg.optimizer == "neumann" else 0
    return LrSchedule(base, steps_per_epoch, warmup, lr.decay_every_epochs, lr.decay_factor)


def run_train(cfg: ExperimentConfig, write: bool = True, out_dir=None) -> RunResult:
    """Train per ``cfg``; returns metrics, final weights and a summary.

    Divergence or a non-finite loss halts the run with a failure row and
    ``status = "diverged"``; metrics up to that point are kept.
    """
    model, data = build_problem(cfg)
    train_idx, eval_idx = split_indices(len(data), cfg.eval_fraction, cfg.seed)
    if cfg.batch_size > train_idx.size:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds the training split ({train_idx.size} samples)")
    root = RngStream(cfg.seed)
    sampler = EpochSampler(train_idx, cfg.batch_size, root.substream("batches"))
    spe = sampler.steps_per_epoch
    total = cfg.epochs * spe
    schedule = make_schedule(cfg, spe)

    init_rng = root.substream("init")
    w0 = model.init_params(init_rng) if cfg.init_scale is None else model.init_params(init_rng, cfg.init_scale)
    if cfg.init_scale == 0:
        w0 = np.zeros(model.param_count)
    stepper = _Stepper(cfg, w0, schedule)

    run_dir = Path(out_dir or cfg.output_dir) / cfg.label
    train_batch = MiniBatch(train_idx)
    eval_batch = MiniBatch(eval_idx) if eval_idx.size else train_batch
    rows: list[dict] = []
    checkpoints: list[Path] = []
    status = "completed"
    prev = stepper.params.copy()

    for t in range(1, total + 1):
        batch = next(sampler)
        t0 = time.perf_counter()
        try:
            # overflow is caught below as a non-finite loss or by the divergence guard
            with np.errstate(over="ignore", invalid="ignore"):
                stepper.step(model, batch)
                cur = stepper.params
                train_loss = model.loss(cur, batch)
            if not math.isfinite(train_loss):
                raise Divergence(t, "non-finite training loss")
        except (Divergence, NonFiniteGradient, FloatingPointError) as e:
            log.error("run %s halted: %s", cfg.label, e)
            rows.append({"step": t, "epoch": t / spe, "train_loss": float("nan")})
            status = "diverged"
            break
        wall = 0 if cfg.deterministic else int(round(1000 * (time.perf_counter() - t0)))
        row = {
            "step": t, "epoch": t / spe, "train_loss": train_loss, "lr": stepper.lr, "mu": stepper.mu,
            "grad_norm": stepper.grad_norm, "update_norm": float(np.linalg.norm(cur - prev)), "wall_ms": wall,
        }
        prev = cur.copy()
        if t % spe == 0:
            row["eval_loss"] = model.loss(cur, eval_batch)
            row["eval_acc"] = model.accuracy(cur, eval_batch)
            epoch = t // spe
            if write and cfg.checkpoint_every_epochs and epoch % cfg.checkpoint_every_epochs == 0:
                checkpoints.append(write_checkpoint(run_dir / "checkpoints" / f"step_{t:08d}.ckpt",
                                                    cur, cfg.optimizer, t))
        rows.append(row)

    weights = stepper.params.copy()
    finite = np.all(np.isfinite(weights))
    with np.errstate(over="ignore", invalid="ignore"):
        summary = _summary(cfg, model, weights, finite, rows, status, spe, train_batch, eval_batch)
    result = RunResult(cfg, weights, rows, summary, status, run_dir, checkpoints=checkpoints)
    if write:
        result.metrics_path = atomic_write_text(run_dir / "metrics.csv", format_metrics(rows))
        if finite:
            result.checkpoint_path = write_checkpoint(run_dir / "final.ckpt", weights, cfg.optimizer,
                                                      summary["total_steps"])
        atomic_write_text(run_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return result


def _summary(cfg, model, weights, finite, rows, status, spe, train_batch, eval_batch) -> dict:
    return {
        "name": cfg.label,
        "optimizer": cfg.optimizer,
        "status": status,
        "steps_per_epoch": spe,
        "total_steps": len([r for r in rows if math.isfinite(r["train_loss"])]),
        "final_train_loss": model.loss(weights, train_batch) if finite else None,
        "final_train_acc": model.accuracy(weights, train_batch) if finite else None,
        "final_eval_loss": model.loss(weights, eval_batch) if finite else None,
        "final_eval_acc": model.accuracy(weights, eval_batch) if finite else None,
        "steps_to_target": steps_to_target(rows, cfg.target_loss),
        "target_loss": cfg.target_loss,
    }


def steps_to_target(rows, target: float) -> int | None:
    for r in rows:
        if r["train_loss"] <= target:
            return r["step"]
    return None


@dataclass
class CompareReport:
    results: list[RunResult]
    table: str
    summary: str
    table_path: Path | None = None
    summary_path: Path | None = None


SUMMARY_HEADER = ["name", "optimizer", "status", "total_steps", "final_train_loss", "final_eval_loss",
                  "final_eval_acc", "steps_to_target"]


def run_compare(configs: list[ExperimentConfig], write: bool = True, out_dir=None) -> CompareReport:
    """Run configs on a shared problem and tabulate their loss curves side by side."""
    if not configs:
        raise ConfigError("compare needs at least one config")
    first = configs[0]
    for c in configs[1:]:
        if c.problem != first.problem or c.seed != first.seed:
            raise ConfigError(f"config {c.source or c.label} does not share problem and seed with "
                              f"{first.source or first.label}")
    labels, seen = [], {}
    for c in configs:
        base = c.label
        seen[base] = seen.get(base, 0) + 1
        labels.append(base if seen[base] == 1 else f"{base}_{seen[base]}")
    out = Path(out_dir or first.output_dir)
    results = []
    for c, label in zip(configs, labels):
        results.append(run_train(replace(c, name=label), write=write, out_dir=out))

    n_rows = max(len(r.rows) for r in results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step"] + labels)
    for i in range(n_rows):
        w.writerow([i + 1] + [_fmt(r.rows[i]["train_loss"]) if i < len(r.rows) else "" for r in results])
    table = buf.getvalue()

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for r in results:
        w.writerow([r.summary["name"], r.summary["optimizer"], r.summary["status"]]
                   + [_fmt(r.summary[k]) for k in SUMMARY_HEADER[3:]])
    summary = buf.getvalue()
    report = CompareReport(results, table, summary)
    if write:
        report.table_path = atomic_write_text(out / "compare.csv", table)
        report.summary_path = atomic_write_text(out / "compare_summary.csv", summary)
    return report


def run_eigenprobe(cfg: ExperimentConfig, checkpoint_paths, k: int | None = None, out_path=None):
    """Probe each checkpoint; writes ``probe.csv`` (header only when there are none)."""
    model, data = build_problem(cfg)
    paths = sorted(str(p) for p in checkpoint_paths)
    if not paths:
        log.warning("no checkpoints matched; writing an empty probe table")
    k = k if k is not None else cfg.probe_k
    bs = cfg.probe_batch_size or cfg.batch_size
    records = trajectory_probe(paths, model, data, k, bs, RngStream(cfg.seed).substream("probe"))
    out_path = Path(out_path or Path(cfg.output_dir) / "probe.csv")
    write_probe_csv(out_path, records)
    return records, out_path


@dataclass
class GradcheckReport:
    grad_errors: list[float]
    hvp_errors: list[float]
    grad_tol: float
    hvp_tol: float

    @property
    def passed(self) -> bool:
        return max(self.grad_errors) <= self.grad_tol and max(self.hvp_errors) <= self.hvp_tol


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def loss_hvp_oracle(model, w, batch, v, eps: float = 1e-4) -> np.ndarray:
    """H v from central differences of the *loss*: independent of gradient and hvp code."""
    n = w.size
    h = eps / max(1.0, np.linalg.norm(v))
    out = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        f = lambda x: model.loss(x, batch)  # noqa: E731
        out[i] = (f(w + e + h * v) - f(w + e - h * v) - f(w - e + h * v) + f(w - e - h * v)) / (4 * h * h)
    return out


def gradcheck(model, data, points: int = 10, seed: int = 0, grad_tol: float = 1e-5, hvp_tol: float = 1e-4,
              batch_size: int | None = None) -> GradcheckReport:
    """Compare analytic gradients and HVPs with finite-difference oracles at random points."""
    rng = RngStream(seed).substream("gradcheck")
    ge, he = [], []
    for i in range(points):
        r = rng.substream("point", i)
        B = min(batch_size or len(data), len(data))
        batch = MiniBatch(r.permutation(len(data))[:B])
        w = model.init_params(r.substream("w"), 0.5)
        v = r.standard_normal(model.param_count)
        g = model.gradient(w, batch)
        ge.append(_rel(g, finite_diff_grad(lambda x: model.loss(x, batch), w)))
        hv = model.hvp(w, batch, v)
        if type(model).hvp is MLPModel.hvp:
            # the model's hvp already is a gradient difference; check it against loss curvature
            he.append(_rel(hv, loss_hvp_oracle(model, w, batch, v)))
        else:
            he.append(_rel(hv, finite_diff_hvp(lambda x: model.gradient(x, batch), w, v)))
    return GradcheckReport(ge, he, grad_tol, hvp_tol)
