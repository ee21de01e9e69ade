"""Built-in oracle and invariant checks on tiny instances (``trajrisk verify``)."""

from __future__ import annotations

import dataclasses
import time
from typing import Callable, List, NamedTuple

import numpy as np

from ..errors import KinkError
from ..model import DataSet, LossSpec, PenaltySpec, ProblemConfig, generate_dataset
from ..oracle import (
    PerturbationSpec,
    analytic_F_derivative,
    analytic_iterate_derivative,
    fd_F_derivative,
    fd_iterate_derivative,
    kronecker_weights,
    whitened_run,
    whitened_weights,
)
from ..risk import oracle_risk
from ..trajectory import BatchPlan, Schedule, run_trajectory, sample_batches
from ..weights import dense_weights


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str
    seconds: float


def _dense_sigma(p, rho=0.3):
    return (1 - rho) * np.eye(p) + rho * np.ones((p, p))


def _relmax(a, b):
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def check_derivative(seed=1) -> str:
    data = generate_dataset(ProblemConfig(n=10, p=6, sparsity_fraction=0.5, seed=seed))
    loss = LossSpec("pseudo_huber", 1.0)
    pen = PenaltySpec()
    sched = Schedule.constant(5, 0.3, batch_fraction=0.5)
    plan = sample_batches(10, sched, seed)
    traj = run_trajectory(data, loss, pen, sched, plan)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        spec = PerturbationSpec(int(rng.integers(10)), int(rng.integers(6)))
        dB = analytic_iterate_derivative(traj, data, spec)
        worst = max(worst, _relmax(dB, fd_iterate_derivative(data, loss, pen, sched, plan, spec)))
        worst = max(worst, _relmax(analytic_F_derivative(traj, data, spec, dB),
                                   fd_F_derivative(data, loss, pen, sched, plan, spec)))
    assert worst <= 1e-4, f"relative error {worst:.2e}"
    return f"max relative error {worst:.1e}"


def _small_instance(seed=2, dense=True):
    p = 8
    cfg = ProblemConfig(n=16, p=p, covariance="dense" if dense else "identity",
                        cov_values=_dense_sigma(p) if dense else None,
                        sparsity_fraction=0.25, seed=seed)
    return generate_dataset(cfg)


def check_kronecker() -> str:
    data = _small_instance()
    sched = Schedule.constant(4, 0.5, batch_fraction=0.5)
    traj = run_trajectory(data, LossSpec("huber", 1.0), PenaltySpec("l1", 0.05), sched,
                          sample_batches(data.n, sched, 3))
    ws = dense_weights(traj, data)
    ref = kronecker_weights(traj, data)
    err = max(np.max(np.abs(getattr(ws, k) - ref[k])) for k in ref)
    assert err <= 1e-10, f"max abs difference {err:.2e}"
    return f"max abs difference {err:.1e}"


def check_full_batch_sgd() -> str:
    data = _small_instance(dense=False)
    loss = LossSpec("huber", 1.0)
    gd = Schedule.constant(6, 0.4)
    sgd = Schedule.constant(6, 0.4, batch_fraction=1.0)
    a = run_trajectory(data, loss, PenaltySpec(), gd, sample_batches(data.n, gd, 0))
    b = run_trajectory(data, loss, PenaltySpec(), sgd, sample_batches(data.n, sgd, 99))
    err = float(np.max(np.abs(a.B - b.B)))
    assert err <= 1e-12, f"difference {err:.2e}"
    return f"difference {err:.1e}"


def check_zero_lambda() -> str:
    data = _small_instance(dense=False)
    sched = Schedule.constant(6, 0.4)
    plan = sample_batches(data.n, sched, 0)
    loss = LossSpec("pseudo_huber", 1.0)
    a = run_trajectory(data, loss, PenaltySpec(), sched, plan)
    b = run_trajectory(data, loss, PenaltySpec("l1", 0.0), sched, plan)
    assert np.array_equal(a.B, b.B), "iterates differ"
    return "identical iterates"


def check_structure() -> str:
    data = _small_instance()
    sched = Schedule.constant(5, 0.5, batch_fraction=0.5)
    traj = run_trajectory(data, LossSpec("huber", 1.0), PenaltySpec(), sched,
                          sample_batches(data.n, sched, 4))
    ws = dense_weights(traj, data)
    for name in ("W", "Ahat", "Atil"):
        assert np.all(np.triu(getattr(ws, name)) == 0), f"{name} not strictly lower"
    for name in ("Khat", "Ktil"):
        assert np.all(np.triu(getattr(ws, name), 1) == 0), f"{name} not lower"
    assert np.array_equal(np.diag(ws.Khat), traj.Ddiag.sum(axis=0)), "diag(Khat) mismatch"
    return "zeros above the diagonal, exact diag(Khat)"


def check_zero_steps() -> str:
    data = _small_instance(dense=False)
    etas = np.array([1.0 if t % 2 == 0 else 0.0 for t in range(8)]) * 0.4
    sched = Schedule(T=8, etas=etas)
    traj = run_trajectory(data, LossSpec("huber", 1.0), PenaltySpec(), sched,
                          sample_batches(data.n, sched, 0))
    r, _ = oracle_risk(traj, data)
    for t in range(1, 7, 2):
        assert r[t + 1] == r[t], f"risk moved across a zero step at column {t}"
    return "flat across zero steps"


def check_change_of_variables() -> str:
    data = _small_instance()
    sched = Schedule.constant(5, 0.5, batch_fraction=0.5)
    plan = sample_batches(data.n, sched, 5)
    loss = LossSpec("pseudo_huber", 1.0)
    traj = run_trajectory(data, loss, PenaltySpec(), sched, plan)
    ws = dense_weights(traj, data)
    run = whitened_run(data, loss, PenaltySpec(), sched, plan)
    other = whitened_weights(run, plan, sched)
    err = max(float(np.max(np.abs(run.F - traj.F))),
              float(np.max(np.abs(other["Ahat"] - ws.Ahat))),
              float(np.max(np.abs(other["Khat"] - ws.Khat))))
    assert err <= 1e-10, f"difference {err:.2e}"
    return f"max difference {err:.1e}"


CHECKS: List[tuple] = [
    ("derivative formula vs finite differences", check_derivative),
    ("dense weights vs Kronecker assembly", check_kronecker),
    ("full-batch SGD equals GD", check_full_batch_sgd),
    ("zero-lambda prox equals plain step", check_zero_lambda),
    ("triangular structure and diag(Khat)", check_structure),
    ("zero step sizes freeze the risk", check_zero_steps),
    ("change of variables keeps F, Ahat, Khat", check_change_of_variables),
]


def run_checks(checks=CHECKS) -> List[CheckResult]:
    out = []
    for name, fn in checks:
        start = time.perf_counter()
        try:
            detail, ok = fn(), True
        except (AssertionError, KinkError) as exc:
            detail, ok = str(exc), False
        out.append(CheckResult(name, ok, detail, time.perf_counter() - start))
    return out
