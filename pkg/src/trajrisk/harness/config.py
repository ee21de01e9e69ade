"""Flat ``section.key=value`` experiment configuration.

One assignment per line, ``#`` starts a comment.  Recognized keys::

    problem.n  problem.p  problem.covariance  problem.cov_values
    problem.noise  problem.noise_param  problem.signal_strength
    problem.sparsity_fraction
    loss.kind  loss.delta
    penalty.kind  penalty.lambda
    schedule.T  schedule.eta  schedule.etas  schedule.eta_cycle
    schedule.batch_fraction
    experiment.algorithm  experiment.replicates  experiment.probes
    experiment.weight_mode  experiment.compute_sub  experiment.master_seed
    experiment.output_dir  experiment.workers  experiment.freeze_batches
    experiment.argmin_k

``schedule.eta`` is a number or ``auto``; ``schedule.etas`` gives all T
step sizes; ``schedule.eta_cycle`` repeats a short pattern (``1,0`` gives
1, 0, 1, 0, ...).  ``problem.cov_values`` is comma separated (p entries for
a diagonal covariance, p*p row-major for a dense one).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy as np

from ..errors import ConfigError
from ..model import LossSpec, PenaltySpec, ProblemConfig
from ..trajectory import Schedule, auto_step_size

ALGORITHMS = ("gd", "sgd", "pgd", "psgd")
WEIGHT_MODES = ("dense", "hutchinson", "auto")

DEFAULTS: Dict[str, str] = {
    "problem.covariance": "identity",
    "problem.noise": "student_t",
    "problem.noise_param": "2",
    "problem.signal_strength": "10",
    "problem.sparsity_fraction": "0.05",
    "loss.kind": "huber",
    "loss.delta": "1",
    "penalty.kind": "none",
    "penalty.lambda": "0",
    "schedule.eta": "auto",
    "schedule.batch_fraction": "1",
    "experiment.algorithm": "gd",
    "experiment.replicates": "1",
    "experiment.probes": "100",
    "experiment.weight_mode": "auto",
    "experiment.compute_sub": "false",
    "experiment.master_seed": "0",
    "experiment.output_dir": "results",
    "experiment.workers": "1",
    "experiment.freeze_batches": "false",
    "experiment.argmin_k": "3",
}
REQUIRED = ("problem.n", "problem.p", "schedule.T")
KNOWN = set(DEFAULTS) | set(REQUIRED) | {"problem.cov_values", "schedule.etas", "schedule.eta_cycle"}


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig
    loss: LossSpec
    penalty: PenaltySpec
    schedule: Schedule
    algorithm: str = "gd"
    replicates: int = 1
    probes: int = 100
    weight_mode: str = "auto"
    compute_sub: bool = False
    master_seed: int = 0
    output_dir: Path = Path("results")
    workers: int = 1
    freeze_batches: bool = False
    argmin_k: int = 3
    raw: Dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"unknown weight_mode {self.weight_mode!r}")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if self.probes < 1:
            raise ConfigError("probes must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.algorithm in ("gd", "sgd") and self.penalty.kind != "none":
            raise ConfigError(f"{self.algorithm} takes no penalty; use pgd/psgd for l1")
        if self.algorithm in ("gd", "pgd") and self.schedule.batch_fraction != 1:
            raise ConfigError(f"{self.algorithm} is full batch; set schedule.batch_fraction=1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")


def parse_lines(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def read_config(path) -> Dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_lines(text.splitlines(), str(path))


def _num(raw, key, kind=float):
    try:
        if kind is int:
            v = float(raw[key])
            if not v.is_integer():
                raise ValueError
            return int(v)
        return float(raw[key])
    except (KeyError, ValueError):
        raise ConfigError(f"{key} must be {'an integer' if kind is int else 'a number'}, "
                          f"got {raw.get(key)!r}") from None


def _flag(raw, key):
    v = raw[key].lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key} must be a boolean, got {raw[key]!r}")


def _floats(text, key):
    try:
        return np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError:
        raise ConfigError(f"{key} must be a comma-separated list of numbers") from None


def build_config(raw: Dict[str, str]) -> ExperimentConfig:
    missing = [k for k in REQUIRED if k not in raw]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    full = {**DEFAULTS, **raw}
    n = _num(full, "problem.n", int)
    p = _num(full, "problem.p", int)

    cov_values = None
    if "problem.cov_values" in full:
        cov_values = _floats(full["problem.cov_values"], "problem.cov_values")
        if full["problem.covariance"] == "dense":
            if cov_values.size != p * p:
                raise ConfigError("dense problem.cov_values needs p*p entries")
            cov_values = cov_values.reshape(p, p)
    problem = ProblemConfig(
        n=n, p=p,
        covariance=full["problem.covariance"],
        cov_values=cov_values,
        noise=full["problem.noise"],
        noise_param=_num(full, "problem.noise_param"),
        signal_strength=_num(full, "problem.signal_strength"),
        sparsity_fraction=_num(full, "problem.sparsity_fraction"),
    )
    problem.sigma_half()

    loss = LossSpec(kind=full["loss.kind"], delta=_num(full, "loss.delta"))
    penalty = PenaltySpec(kind=full["penalty.kind"], lam=_num(full, "penalty.lambda"))

    T = _num(full, "schedule.T", int)
    if T < 1:
        raise ConfigError("schedule.T must be at least 1")
    frac = _num(full, "schedule.batch_fraction")
    auto = False
    if "schedule.etas" in full:
        etas = _floats(full["schedule.etas"], "schedule.etas")
    elif "schedule.eta_cycle" in full:
        cycle = _floats(full["schedule.eta_cycle"], "schedule.eta_cycle")
        if cycle.size == 0:
            raise ConfigError("schedule.eta_cycle is empty")
        etas = np.resize(cycle, T)
    elif full["schedule.eta"].lower() == "auto":
        # the step size rule only sees the batch fraction, not rounding
        auto = True
        etas = np.full(T, auto_step_size(n, p, frac))
    else:
        etas = np.full(T, _num(full, "schedule.eta"))
    schedule = Schedule(T=T, etas=etas, batch_fraction=frac, auto_eta=auto)

    return ExperimentConfig(
        problem=problem, loss=loss, penalty=penalty, schedule=schedule,
        algorithm=full["experiment.algorithm"],
        replicates=_num(full, "experiment.replicates", int),
        probes=_num(full, "experiment.probes", int),
        weight_mode=full["experiment.weight_mode"],
        compute_sub=_flag(full, "experiment.compute_sub"),
        master_seed=_seed(full["experiment.master_seed"]),
        output_dir=Path(full["experiment.output_dir"]),
        workers=_num(full, "experiment.workers", int),
        freeze_batches=_flag(full, "experiment.freeze_batches"),
        argmin_k=_num(full, "experiment.argmin_k", int),
        raw=dict(full),
    )


def _seed(text):
    try:
        return int(text, 0)
    except ValueError:
        raise ConfigError(f"seed must be an unsigned integer, got {text!r}") from None


def load_config(path=None, overrides: Iterable[str] = (), out: Optional[str] = None,
                seed: Optional[int] = None) -> ExperimentConfig:
    """Read a file (optional), apply ``key=value`` overrides, then CLI shorthands."""
    raw = read_config(path) if path is not None else {}
    raw.update(parse_lines(overrides, "--set"))
    if out is not None:
        raw["experiment.output_dir"] = out
    if seed is not None:
        raw["experiment.master_seed"] = str(seed)
    return build_config(raw)
