"""The unified (proximal) GD / SGD iteration and its recorded Jacobians.

Index convention: iterate columns are 0-based, ``B[:, 0]`` is the
initializer and step ``t`` maps column ``t`` to column ``t + 1`` using
``etas[t]`` and batch ``plan.batches[t]``.  The last step size and batch
are carried for completeness but never used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import ConfigError, NumericalFailure
from .model import DataSet, LossSpec, PenaltySpec, prox, prox_jacobian_diag, psi, psi_prime, round_half_up


def auto_step_size(n: int, p: int, batch_fraction: float = 1.0) -> float:
    n_star = n if batch_fraction >= 1 else batch_fraction * n
    return (1.0 + np.sqrt(p / n_star)) ** -2


@dataclass(frozen=True)
class Schedule:
    T: int
    etas: np.ndarray
    batch_fraction: float = 1.0
    auto_eta: bool = False

    def __post_init__(self):
        etas = np.asarray(self.etas, dtype=float)
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if etas.shape != (self.T,):
            raise ConfigError(f"etas must have length T={self.T}, got shape {etas.shape}")
        if np.any(etas < 0) or not np.all(np.isfinite(etas)):
            raise ConfigError("step sizes must be finite and nonnegative")
        if not 0 < self.batch_fraction <= 1:
            raise ConfigError("batch_fraction must lie in (0, 1]")
        object.__setattr__(self, "etas", etas)

    @classmethod
    def constant(cls, T, eta, batch_fraction=1.0):
        return cls(T=T, etas=np.full(T, float(eta)), batch_fraction=batch_fraction)

    @classmethod
    def auto(cls, T, n, p, batch_fraction=1.0):
        eta = auto_step_size(n, p, batch_fraction)
        return cls(T=T, etas=np.full(T, eta), batch_fraction=batch_fraction, auto_eta=True)

    def batch_size(self, n: int) -> int:
        return n if self.batch_fraction >= 1 else round_half_up(self.batch_fraction * n)


@dataclass(frozen=True)
class BatchPlan:
    batches: List[np.ndarray]
    n: int

    @property
    def full(self) -> bool:
        return all(len(b) == self.n for b in self.batches)

    def mask(self, t: int) -> np.ndarray:
        m = np.zeros(self.n)
        m[self.batches[t]] = 1.0
        return m

    @property
    def as_diagonal(self) -> np.ndarray:
        """n x T 0/1 matrix whose column t is the diagonal of S_t."""
        return np.column_stack([self.mask(t) for t in range(len(self.batches))])


def sample_batches(n: int, schedule: Schedule, seed) -> BatchPlan:
    """Independent uniform subsets of fixed size, drawn without replacement."""
    size = schedule.batch_size(n)
    if size < 1:
        raise ConfigError(f"batch_fraction={schedule.batch_fraction} gives an empty batch for n={n}")
    if size >= n:
        full = np.arange(n)
        return BatchPlan(batches=[full] * schedule.T, n=n)
    rng = np.random.default_rng(seed)
    batches = [np.sort(rng.choice(n, size=size, replace=False)) for _ in range(schedule.T)]
    return BatchPlan(batches=batches, n=n)


@dataclass(frozen=True)
class Trajectory:
    """Everything recorded along one run.

    ``Dtil_diag[:, t]`` is the prox-Jacobian diagonal of step t (support of
    ``B[:, t+1]``); its last column corresponds to no step and is all zeros.
    """

    B: np.ndarray
    R: np.ndarray
    F: np.ndarray
    Ftil: np.ndarray
    Ddiag: np.ndarray
    Dtil_diag: np.ndarray
    plan: BatchPlan
    schedule: Schedule
    loss: LossSpec
    pen: PenaltySpec

    @property
    def T(self) -> int:
        return self.B.shape[1]

    def step_scale(self, t: int) -> float:
        """eta_t / |I_t|."""
        return self.schedule.etas[t] / len(self.plan.batches[t])


def run_trajectory(
    data: DataSet,
    loss: LossSpec,
    pen: PenaltySpec,
    schedule: Schedule,
    plan: BatchPlan,
    b_init: Optional[np.ndarray] = None,
) -> Trajectory:
    X, y = data.X, data.y
    n, p = X.shape
    T = schedule.T
    if len(plan.batches) != T or plan.n != n:
        raise ConfigError("batch plan does not match schedule length or sample size")

    B = np.zeros((p, T))
    R = np.zeros((n, T))
    F = np.zeros((n, T))
    Ftil = np.zeros((n, T))
    Ddiag = np.zeros((n, T))
    Dtil = np.zeros((p, T))

    b = np.zeros(p) if b_init is None else np.array(b_init, dtype=float)
    # overflow shows up as non-finite values, caught explicitly
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            r = y - X @ b
            if not (np.all(np.isfinite(b)) and np.all(np.isfinite(r))):
                raise NumericalFailure(t)
            B[:, t] = b
            R[:, t] = r
            psi_r = psi(r, loss)
            Ftil[:, t] = psi_r
            Ddiag[:, t] = psi_prime(r, loss)
            idx = plan.batches[t]
            F[idx, t] = psi_r[idx]
            if t == T - 1:
                break
            eta = schedule.etas[t]
            grad = X.T @ F[:, t]
            b = prox(b + (eta / len(idx)) * grad, eta, pen)
            Dtil[:, t] = prox_jacobian_diag(b, pen)

    for a in (B, R, F, Ftil, Ddiag, Dtil):
        a.flags.writeable = False
    return Trajectory(B=B, R=R, F=F, Ftil=Ftil, Ddiag=Ddiag, Dtil_diag=Dtil,
                      plan=plan, schedule=schedule, loss=loss, pen=pen)


def apply_P(t: int, v: np.ndarray, traj: Trajectory, data: DataSet) -> np.ndarray:
    """Apply P_t = Dtil_t (I - (eta_t/|I_t|) X^T S_t D_t X) to v (p-vector or p x k).

    Only rows of X in the batch I_t enter, so the cost is O(|I_t| p) per column.
    """
    if not 0 <= t < traj.T - 1:
        raise IndexError(f"P_t is defined for 0 <= t < T-1, got t={t}")
    v = np.asarray(v, dtype=float)
    dtil = traj.Dtil_diag[:, t]
    if v.ndim == 2:
        dtil = dtil[:, None]
    c = traj.step_scale(t)
    if c == 0.0:
        return dtil * v
    idx = traj.plan.batches[t]
    if len(idx) == data.n:
        Xb, d = data.X, traj.Ddiag[:, t]
    else:
        Xb, d = data.X[idx], traj.Ddiag[idx, t]
    if v.ndim == 2:
        d = d[:, None]
    return dtil * (v - c * (Xb.T @ (d * (Xb @ v))))
