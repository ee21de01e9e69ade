import numpy as np
import pytest

from trajrisk import LossSpec, PenaltySpec, ProblemConfig, Schedule, generate_dataset, run_trajectory, sample_batches


def dense_sigma(p, rho=0.3):
    return (1 - rho) * np.eye(p) + rho * np.ones((p, p))


def make_data(n=40, p=20, seed=0, dense=False, **kw):
    kw.setdefault("sparsity_fraction", 0.25)
    if dense:
        kw.update(covariance="dense", cov_values=dense_sigma(p))
    return generate_dataset(ProblemConfig(n=n, p=p, seed=seed, **kw))


def make_run(data, T=6, eta=0.5, frac=0.5, loss=("pseudo_huber", 1.0), pen=("none", 0.0), seed=0):
    sched = Schedule.constant(T, eta, batch_fraction=frac)
    plan = sample_batches(data.n, sched, seed)
    lspec, pspec = LossSpec(*loss), PenaltySpec(*pen)
    return run_trajectory(data, lspec, pspec, sched, plan), lspec, pspec, sched, plan


@pytest.fixture
def small():
    data = make_data(dense=True)
    traj, *_ = make_run(data)
    return data, traj
