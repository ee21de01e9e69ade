"""Independent checks for the derivative and weight machinery.

Three families live here:

* finite-difference derivatives of iterates and of F with respect to one
  design entry x_ij, obtained by re-running the whole trajectory;
* the closed-form derivative of the iterates (sum over earlier steps of
  Gamma blocks applied to rank-one seeds) and the chain rule for F;
* literal Kronecker assembly of Gamma = M^{-1} L (Lambda x I) Dtil and of the
  T x T matrices, for brute-force comparison with the matrix-free code, plus
  the whitened-coordinate rerun used for the change-of-variables check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import sqrtm

from .errors import KinkError
from .model import DataSet, LossSpec, PenaltySpec, prox, prox_jacobian_diag, psi, psi_prime
from .trajectory import BatchPlan, Schedule, Trajectory, run_trajectory
from .weights import GammaOperator, WeightSet, gamma_apply

HUBER_GATE = 1e-3


@dataclass(frozen=True)
class PerturbationSpec:
    i: int
    j: int
    h: Optional[float] = None

    def step(self, X: np.ndarray) -> float:
        if self.h is not None:
            if not self.h > 0:
                raise ValueError("h must be positive")
            return self.h
        return 1e-5 * (1.0 + abs(X[self.i, self.j]))

    def check(self, data: DataSet):
        if not (0 <= self.i < data.n and 0 <= self.j < data.p):
            raise IndexError(f"entry ({self.i}, {self.j}) outside {data.X.shape}")


def _perturbed_runs(data, loss, pen, schedule, plan, spec, regenerate_y):
    spec.check(data)
    h = spec.step(data.X)
    runs = []
    for sign in (1.0, -1.0):
        Xp = np.array(data.X)
        Xp[spec.i, spec.j] += sign * h
        runs.append(run_trajectory(data.with_design(Xp, regenerate_y), loss, pen, schedule, plan))
    return runs, h


def _check_smooth(base, runs, loss, pen):
    if pen.kind == "l1":
        for r in runs:
            if not np.array_equal(r.B != 0, base.B != 0):
                raise KinkError("soft-threshold support changed under the perturbation; "
                                "pick another (i, j) or a smaller h")
    if loss.kind == "huber":
        if np.any(np.abs(np.abs(base.R) - loss.delta) < HUBER_GATE):
            raise KinkError("a residual sits within the Huber gate of +-delta")
        for r in runs:
            if not np.array_equal(r.Ddiag, base.Ddiag):
                raise KinkError("Huber active set changed under the perturbation")


def fd_iterate_derivative(data: DataSet, loss: LossSpec, pen: PenaltySpec, schedule: Schedule,
                          plan: BatchPlan, spec: PerturbationSpec,
                          regenerate_y: bool = True) -> np.ndarray:
    """Central difference of the iterates B (p x T) in x_ij, same batches.

    With ``regenerate_y`` the response follows the perturbed design,
    y = (X +- h e_i e_j^T) b* + eps, which is the convention the closed-form
    derivative assumes.
    """
    base = run_trajectory(data, loss, pen, schedule, plan)
    (plus, minus), h = _perturbed_runs(data, loss, pen, schedule, plan, spec, regenerate_y)
    _check_smooth(base, (plus, minus), loss, pen)
    return (plus.B - minus.B) / (2 * h)


def fd_F_derivative(data: DataSet, loss: LossSpec, pen: PenaltySpec, schedule: Schedule,
                    plan: BatchPlan, spec: PerturbationSpec,
                    regenerate_y: bool = True) -> np.ndarray:
    base = run_trajectory(data, loss, pen, schedule, plan)
    (plus, minus), h = _perturbed_runs(data, loss, pen, schedule, plan, spec, regenerate_y)
    _check_smooth(base, (plus, minus), loss, pen)
    return (plus.F - minus.F) / (2 * h)


def analytic_iterate_derivative(traj: Trajectory, data: DataSet,
                                spec: PerturbationSpec) -> np.ndarray:
    """d b_t / d x_ij for every t, from the Gamma blocks (p x T, column 0 zero).

        d b_t = sum_{s<t} Gamma_{t,s} [F_is e_j - H_js X^T S_s D_s e_i],

    with H = B - b* (the raw coefficient error; y is taken as X b* + eps).
    """
    spec.check(data)
    i, j = spec.i, spec.j
    n, p = data.X.shape
    T = traj.T
    gamma = GammaOperator(traj, data)
    H = traj.B - data.b_star[:, None]
    SD = traj.plan.as_diagonal * traj.Ddiag
    out = np.zeros((p, T))
    for s in range(T - 1):
        seed = -H[j, s] * data.X[i] * SD[i, s]
        seed[j] += traj.F[i, s]
        for k, g in enumerate(gamma_apply(s, seed, gamma)):
            out[:, s + 1 + k] += g
    return out


def analytic_F_derivative(traj: Trajectory, data: DataSet, spec: PerturbationSpec,
                          dB: Optional[np.ndarray] = None) -> np.ndarray:
    """d F_lt / d x_ij for all (l, t) by the chain rule through the residuals."""
    if dB is None:
        dB = analytic_iterate_derivative(traj, data, spec)
    H = traj.B - data.b_star[:, None]
    dres = -(data.X @ dB)
    dres[spec.i, :] -= H[spec.j, :]
    SD = traj.plan.as_diagonal * traj.Ddiag
    return SD * dres


# ---------------------------------------------------------------------------
# Literal Kronecker construction


def kronecker_gamma(traj: Trajectory, data: DataSet) -> np.ndarray:
    """Gamma = M^{-1} L (Lambda x I_p) Dtil as a dense pT x pT matrix."""
    X = data.X
    n, p = X.shape
    T = traj.T
    if T == 1:
        return np.zeros((p, p))
    I_p = np.eye(p)
    E = np.eye(T)
    Dtil = sum(np.kron(np.outer(E[t], E[t]), np.diag(traj.Dtil_diag[:, t])) for t in range(T))
    L = sum(np.kron(np.outer(E[t], E[t - 1]), I_p) for t in range(1, T))
    Lam = np.diag([traj.step_scale(t) for t in range(T)])
    M = np.eye(p * T)
    for t in range(T - 1):
        S_t = np.diag(traj.plan.mask(t))
        D_t = np.diag(traj.Ddiag[:, t])
        P_t = np.diag(traj.Dtil_diag[:, t]) @ (I_p - traj.step_scale(t) * X.T @ S_t @ D_t @ X)
        M -= np.kron(np.outer(E[t + 1], E[t]), P_t)
    rhs = L @ np.kron(Lam, I_p) @ Dtil
    return np.linalg.solve(M, rhs)


def kronecker_weights(traj: Trajectory, data: DataSet, Gamma: Optional[np.ndarray] = None) -> dict:
    """W, Ahat, Khat, Atil, Ktil by the literal sums of Kronecker products."""
    X = data.X
    n, p = X.shape
    T = traj.T
    if Gamma is None:
        Gamma = kronecker_gamma(traj, data)
    I_T = np.eye(T)
    root = np.real(sqrtm(data.sigma))
    calD = np.zeros((n * T, n * T))
    calS = np.zeros((n * T, n * T))
    for t in range(T):
        calD[t * n:(t + 1) * n, t * n:(t + 1) * n] = np.diag(traj.Ddiag[:, t])
        calS[t * n:(t + 1) * n, t * n:(t + 1) * n] = np.diag(traj.plan.mask(t))
    IX = np.kron(I_T, X)
    IXt = np.kron(I_T, X.T)
    core = IX @ Gamma @ IXt
    root_gamma = np.kron(I_T, root) @ Gamma @ np.kron(I_T, root)

    W = np.zeros((T, T))
    for j in range(p):
        ej = np.kron(I_T, I_p_col(p, j))
        W += ej.T @ root_gamma @ ej
    A = np.zeros((T, T))
    Koff = np.zeros((T, T))
    At = np.zeros((T, T))
    Ktoff = np.zeros((T, T))
    for i in range(n):
        ei = np.kron(I_T, I_p_col(n, i))
        A += ei.T @ calD @ core @ ei
        Koff += ei.T @ calD @ core @ calS @ calD @ ei
        At += ei.T @ core @ calS @ calD @ ei
        Ktoff += ei.T @ calS @ calD @ core @ calS @ calD @ ei
    trD = np.diag(traj.Ddiag.sum(axis=0))
    trSD = np.diag((traj.plan.as_diagonal * traj.Ddiag).sum(axis=0))
    return {"W": W, "Ahat": A, "Khat": trD - Koff, "Atil": At, "Ktil": trSD - Ktoff}


def I_p_col(size: int, k: int) -> np.ndarray:
    e = np.zeros((size, 1))
    e[k, 0] = 1.0
    return e


# ---------------------------------------------------------------------------
# Change of variables


@dataclass(frozen=True)
class WhitenedRun:
    """Trajectory of the same algorithm written in whitened coordinates.

    With X = G Q (Q = Sigma^{1/2} factor such that G has i.i.d. N(0,1) rows)
    and theta = Q b, the iteration reads
        theta_{t+1} = Q phi_t(Q^{-1} theta_t + (eta_t/|I_t|) Q^T G^T S_t psi(y - G theta_t)),
    which is the plain iteration on G when Sigma = I.
    """

    G: np.ndarray
    Q: np.ndarray
    Theta: np.ndarray
    F: np.ndarray
    Ddiag: np.ndarray
    Dtil_diag: np.ndarray


def whitened_run(data: DataSet, loss: LossSpec, pen: PenaltySpec, schedule: Schedule,
                 plan: BatchPlan) -> WhitenedRun:
    Q = data.sigma_half.T
    G = np.linalg.solve(Q.T, data.X.T).T  # X Q^{-1}
    n, p = G.shape
    T = schedule.T
    Theta = np.zeros((p, T))
    F = np.zeros((n, T))
    Dd = np.zeros((n, T))
    Dt = np.zeros((p, T))
    theta = np.zeros(p)
    for t in range(T):
        Theta[:, t] = theta
        r = data.y - G @ theta
        idx = plan.batches[t]
        F[idx, t] = psi(r[idx], loss)
        Dd[:, t] = psi_prime(r, loss)
        if t == T - 1:
            break
        eta = schedule.etas[t]
        v = np.linalg.solve(Q, theta) + (eta / len(idx)) * (Q.T @ (G.T @ F[:, t]))
        b_next = prox(v, eta, pen)
        Dt[:, t] = prox_jacobian_diag(b_next, pen)
        theta = Q @ b_next
    return WhitenedRun(G=G, Q=Q, Theta=Theta, F=F, Ddiag=Dd, Dtil_diag=Dt)


def whitened_weights(run: WhitenedRun, plan: BatchPlan, schedule: Schedule) -> dict:
    """Ahat and Khat from Gamma blocks built in whitened coordinates.

    Blocks follow Gamma^G_{s+1,s} = c_s Q Dtil_s Q^T and
    Gamma^G_{t+1,s} = P^G_t Gamma^G_{t,s} with
    P^G_t = Q Dtil_t (Q^{-1} - c_t Q^T G^T S_t D_t G), assembled densely.
    """
    G, Q = run.G, run.Q
    n, p = G.shape
    T = schedule.T
    Qinv = np.linalg.inv(Q)
    trD = run.Ddiag.sum(axis=0)
    SD = np.column_stack([plan.mask(t) for t in range(T)]) * run.Ddiag
    c = [schedule.etas[t] / len(plan.batches[t]) for t in range(T)]
    P = []
    for t in range(T - 1):
        inner = Qinv - c[t] * Q.T @ (G.T * SD[:, t]) @ G
        P.append(Q @ (run.Dtil_diag[:, [t]] * inner))
    A = np.zeros((T, T))
    K = np.diag(trD)
    for s in range(T - 1):
        block = c[s] * Q @ (run.Dtil_diag[:, [s]] * Q.T)
        for t in range(s + 1, T):
            a = np.einsum("ij,ij->i", G @ block, G)
            A[t, s] = run.Ddiag[:, t] @ a
            K[t, s] = -(run.Ddiag[:, t] * SD[:, s]) @ a
            if t < T - 1:
                block = P[t] @ block
    return {"Ahat": A, "Khat": K}
