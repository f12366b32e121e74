"""Plain-text ``key = value`` experiment configs.

One assignment per line, ``#`` starts a comment, dotted keys nest
(``neumann.alpha = 1e-7``).  Unset Neumann keys take the published defaults.
"""
from __future__ import annotations

import difflib
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..neumann import NeumannHyperParams

OUT_DIR_ENV = "NEUMANN_OPT_OUT_DIR"
OPTIMIZERS = ("neumann", "sgd", "momentum", "adam", "rmsprop")
FAMILIES = ("quadratic", "logistic", "mlp")


class ConfigError(ValueError):
    def __init__(self, msg: str, lineno: int | None = None, path=None):
        where = f"{path}:" if path else ""
        where += f"{lineno}: " if lineno else (" " if where else "")
        super().__init__(f"{where}{msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class ProblemSpec:
    family: str = "logistic"
    spectrum: tuple[float, ...] | None = None
    dim: int = 10
    condition: float = 10.0
    w_star: tuple[float, ...] | None = None
    noise: float | None = None  # quadratic: 0, mlp: cluster spread 0.35
    n_samples: int = 1000
    feature_dim: int = 10
    separation: float = 1.0
    hidden_width: int = 8
    data_path: str | None = None
    seed: int | None = None

    def resolved_spectrum(self) -> np.ndarray:
        if self.spectrum is not None:
            return np.array(self.spectrum, dtype=np.float64)
        return np.logspace(-np.log10(self.condition), 0.0, self.dim)


@dataclass(frozen=True)
class LrConfig:
    base: float = 0.1
    warmup_epochs: int | None = None  # None: burn-in length for neumann, 0 otherwise
    decay_every_epochs: int = 0
    decay_factor: float = 1.0
    reference_batch: int = 0  # >0 enables linear scaling with batch size


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    optimizer: str = "neumann"
    neumann: NeumannHyperParams = field(default_factory=NeumannHyperParams)
    baseline: dict = field(default_factory=dict)
    lr: LrConfig = field(default_factory=LrConfig)
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    eval_fraction: float = 0.1
    output_dir: str = "runs"
    deterministic: bool = True
    name: str | None = None
    init_scale: float | None = None
    checkpoint_every_epochs: int = 0
    target_loss: float = 1e-6
    probe_k: int = 10
    probe_batch_size: int | None = None
    source: str | None = None

    @property
    def label(self) -> str:
        return self.name or self.optimizer

    @property
    def problem_seed(self) -> int:
        return self.problem.seed if self.problem.seed is not None else self.seed


# -- value parsers ------------------------------------------------------------

def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    parts = [p for p in s.replace("[", "").replace("]", "").split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of numbers")
    return tuple(float(p) for p in parts)


def _str(s: str) -> str:
    s = s.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        s = s[1:-1]
    return s


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("none", "") else float(s)


def _opt_int(s: str) -> int | None:
    return None if s.strip().lower() in ("none", "") else int(s)


def _in(choices):
    def parse(s):
        v = _str(s)
        if v not in choices:
            raise ValueError(f"must be one of {', '.join(choices)}")
        return v
    return parse


def _check(cond, msg):
    def validate(v):
        if not cond(v):
            raise ValueError(msg)
    return validate


_pos = _check(lambda v: v > 0, "must be positive")
_nonneg = _check(lambda v: v >= 0, "must be >= 0")
_unit = _check(lambda v: 0 <= v < 1, "must be in [0,1)")

# key -> (parser, validator or None)
SCHEMA = {
    "optimizer": (_in(OPTIMIZERS), None),
    "name": (_str, None),
    "batch_size": (int, _pos),
    "epochs": (int, _pos),
    "seed": (int, None),
    "eval_fraction": (float, _unit),
    "output_dir": (_str, None),
    "deterministic": (_bool, None),
    "init_scale": (_opt_float, None),
    "checkpoint_every_epochs": (int, _nonneg),
    "target_loss": (float, _pos),
    "problem.family": (_in(FAMILIES), None),
    "problem.spectrum": (_floats, None),
    "problem.dim": (int, _pos),
    "problem.condition": (float, _check(lambda v: v >= 1, "must be >= 1")),
    "problem.w_star": (_floats, None),
    "problem.noise": (float, _nonneg),
    "problem.n_samples": (int, _pos),
    "problem.feature_dim": (int, _pos),
    "problem.separation": (float, _nonneg),
    "problem.hidden_width": (int, _pos),
    "problem.data_path": (_str, None),
    "problem.seed": (int, None),
    "lr.base": (float, _pos),
    "lr.warmup_epochs": (_opt_int, None),
    "lr.decay_every_epochs": (int, _nonneg),
    "lr.decay_factor": (float, _check(lambda v: 0 < v <= 1, "must be in (0,1]")),
    "lr.reference_batch": (int, _nonneg),
    "neumann.alpha": (float, _nonneg),
    "neumann.beta": (float, _nonneg),
    "neumann.gamma": (float, _check(lambda v: 0 <= v < 1, "gamma must be in [0,1)")),
    "neumann.mu_min": (float, _unit),
    "neumann.mu_max": (float, _unit),
    "neumann.burnin_epochs": (int, _nonneg),
    "neumann.k0_epochs": (int, _pos),
    "neumann.k_doubling": (_bool, None),
    "neumann.epsilon_guard": (_opt_float, None),
    "neumann.eta_mode": (_in(("schedule", "inverse")), None),
    "neumann.anchor": (_in(("displaced", "implied")), None),
    "momentum.mu": (float, _unit),
    "adam.beta1": (float, _unit),
    "adam.beta2": (float, _unit),
    "adam.eps": (float, _pos),
    "rmsprop.rho": (float, _unit),
    "rmsprop.eps": (float, _pos),
    "probe.k": (int, _check(lambda v: v >= 2, "must be >= 2")),
    "probe.batch_size": (_opt_int, None),
}


def parse_lines(lines, path=None) -> dict[str, tuple[object, int]]:
    """Parse and type-check assignments; returns ``key -> (value, lineno)``."""
    values: dict[str, tuple[object, int]] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno, path)
        key, _, text = (part.strip() for part in line.partition("="))
        if key not in SCHEMA:
            hint = difflib.get_close_matches(key, SCHEMA, n=1)
            extra = f" (did you mean {hint[0]!r}?)" if hint else ""
            raise ConfigError(f"unknown key {key!r}{extra}", lineno, path)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {values[key][1]})", lineno, path)
        parser, validate = SCHEMA[key]
        try:
            value = parser(text)
        except ValueError as e:
            raise ConfigError(f"{key}: cannot parse {text!r} ({e})", lineno, path) from None
        if validate is not None:
            try:
                validate(value)
            except ValueError as e:
                msg = str(e) if key.split(".")[-1] in str(e) else f"{key.split('.')[-1]} {e}"
                raise ConfigError(msg, lineno, path) from None
        values[key] = (value, lineno)
    return values


def build_config(values: dict[str, tuple[object, int]], path=None) -> ExperimentConfig:
    def section(prefix):
        return {k[len(prefix) + 1:]: v for k, (v, _) in values.items() if k.startswith(prefix + ".")}

    def line_of(*keys):
        for k in keys:
            if k in values:
                return values[k][1]
        return None

    top = {k: v for k, (v, _) in values.items() if "." not in k}
    optimizer = top.pop("optimizer", "neumann")

    problem = ProblemSpec(**{k: tuple(v) if isinstance(v, tuple) else v for k, v in section("problem").items()})
    if problem.family == "quadratic" and problem.w_star is not None:
        if len(problem.w_star) != len(problem.resolved_spectrum()):
            raise ConfigError("problem.w_star length must match the spectrum", line_of("problem.w_star"), path)

    try:
        neumann = NeumannHyperParams(**section("neumann"))
    except ValueError as e:
        raise ConfigError(str(e), line_of("neumann.mu_max", "neumann.mu_min"), path) from None

    for other in ("momentum", "adam", "rmsprop"):
        if section(other) and other != optimizer:
            raise ConfigError(f"{other}.* keys given but optimizer is {optimizer!r}",
                              line_of(*[k for k in values if k.startswith(other + ".")]), path)

    top.setdefault("output_dir", os.environ.get(OUT_DIR_ENV, "runs"))
    probe = section("probe")
    cfg = ExperimentConfig(
        problem=problem,
        optimizer=optimizer,
        neumann=neumann,
        baseline=section(optimizer) if optimizer != "neumann" else {},
        lr=LrConfig(**section("lr")),
        probe_k=probe.get("k", 10),
        probe_batch_size=probe.get("batch_size"),
        source=str(path) if path else None,
        **top,
    )
    return cfg


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config ({e.strerror})", None, path) from None
    return build_config(parse_lines(text.splitlines(), path), path)


def parse_config_text(text: str) -> ExperimentConfig:
    return build_config(parse_lines(text.splitlines()))


def with_overrides(cfg: ExperimentConfig, seed=None, output_dir=None, deterministic=None) -> ExperimentConfig:
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if output_dir is not None:
        changes["output_dir"] = str(output_dir)
    if deterministic is not None:
        changes["deterministic"] = deterministic
    return replace(cfg, **changes)
