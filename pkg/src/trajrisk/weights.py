"""T x T weight matrices W, A-hat, K-hat (and the batch-restricted A-tilde, K-tilde).

All five are built from the blocks Gamma_{t,s} of the chain-rule operator

    Gamma_{s+1,s} = (eta_s/|I_s|) Dtil_s,      Gamma_{t+1,s} = P_t Gamma_{t,s},

which is never formed as a pT x pT matrix.  ``dense_weights`` assembles every
block column by column; ``hutchinson_weights`` pushes Rademacher probes
through the same recursion.  Entry formulas (D_t, S_t diagonal):

    W[t,s]    = tr(Sigma Gamma_{t,s})
    Ahat[t,s] = tr(D_t X Gamma_{t,s} X^T)
    Khat[t,s] = [t=s] tr(D_t) - tr(D_t X Gamma_{t,s} X^T S_s D_s)
    Atil[t,s] = tr(X Gamma_{t,s} X^T S_s D_s)
    Ktil[t,s] = [t=s] tr(S_t D_t) - tr(S_t D_t X Gamma_{t,s} X^T S_s D_s)
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from .errors import CapacityError, SingularityError
from .model import DataSet
from .trajectory import Trajectory, apply_P

DENSE_CAP = 4000
DEFAULT_PROBES = 100


class SmallDiagonalWarning(UserWarning):
    """A diagonal of the batch-restricted K-tilde is small relative to its row."""


@dataclass(frozen=True)
class GammaOperator:
    traj: Trajectory
    data: DataSet

    @property
    def T(self) -> int:
        return self.traj.T

    def seed(self, s: int, v: np.ndarray) -> np.ndarray:
        """Gamma_{s+1,s} v."""
        d = self.traj.Dtil_diag[:, s]
        if v.ndim == 2:
            d = d[:, None]
        return self.traj.step_scale(s) * d * v

    def advance(self, t: int, G: np.ndarray) -> np.ndarray:
        """Gamma_{t+1,s} from Gamma_{t,s}: one application of P_t."""
        return apply_P(t, G, self.traj, self.data)


def gamma_apply(s: int, v: np.ndarray, gamma: GammaOperator) -> List[np.ndarray]:
    """Return [Gamma_{t,s} v for t = s+1, ..., T-1] (0-based), i.e. T-1-s arrays.

    ``v`` may be a p-vector or a p x k matrix of stacked vectors.
    """
    T = gamma.T
    if not 0 <= s < T - 1:
        raise IndexError(f"gamma_apply needs 0 <= s < T-1, got s={s} with T={T}")
    g = gamma.seed(s, np.asarray(v, dtype=float))
    out = [g]
    for t in range(s + 1, T - 1):
        g = gamma.advance(t, g)
        out.append(g)
    return out


@dataclass(frozen=True)
class WeightSet:
    W: np.ndarray
    Ahat: np.ndarray
    Khat: np.ndarray
    n: int
    method: str
    Wtilde: Optional[np.ndarray] = None
    Ktil: Optional[np.ndarray] = None
    Atil: Optional[np.ndarray] = None
    probes: Optional[int] = None
    probe_seed: Optional[int] = None
    stderr: Optional[Dict[str, np.ndarray]] = None

    @property
    def T(self) -> int:
        return self.W.shape[0]


def _diag_parts(traj: Trajectory):
    D = traj.Ddiag
    S = traj.plan.as_diagonal
    return D, S, S * D


def dense_weights(traj: Trajectory, data: DataSet, cap: int = DENSE_CAP,
                  include_sub: bool = True) -> WeightSet:
    """Exact weights from every Gamma block assembled on the standard basis."""
    n, p = data.X.shape
    T = traj.T
    if p * T > cap:
        raise CapacityError(
            f"dense assembly needs p*T = {p * T} > cap {cap}; use hutchinson_weights"
        )
    gamma = GammaOperator(traj, data)
    X = data.X
    sigma = data.sigma
    D, S, SD = _diag_parts(traj)

    W = np.zeros((T, T))
    Ahat = np.zeros((T, T))
    Khat = np.diag(D.sum(axis=0))
    Atil = np.zeros((T, T))
    Ktil = np.diag(SD.sum(axis=0))
    eye = np.eye(p)
    for s in range(T - 1):
        for k, G in enumerate(gamma_apply(s, eye, gamma)):
            t = s + 1 + k
            W[t, s] = np.sum(sigma * G.T)
            # diagonal of X Gamma X^T; every trace needed is a weighted sum of it
            a = np.einsum("ij,ij->i", X @ G, X)
            Ahat[t, s] = D[:, t] @ a
            Khat[t, s] = -(D[:, t] * SD[:, s]) @ a
            Atil[t, s] = SD[:, s] @ a
            Ktil[t, s] = -(SD[:, t] * SD[:, s]) @ a
    if not include_sub:
        Atil = Ktil = None
    return WeightSet(W=W, Ahat=Ahat, Khat=Khat, n=n, method="dense", Atil=Atil, Ktil=Ktil)


def _rademacher(rng, shape):
    return rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0


class _Accumulator:
    """Running per-entry sums of probe values for mean and standard error."""

    def __init__(self, T):
        self.sum = np.zeros((T, T))
        self.sumsq = np.zeros((T, T))

    def add(self, t, vals):
        # vals: (k active s) x (probes in chunk)
        k = vals.shape[0]
        self.sum[t, :k] += vals.sum(axis=1)
        self.sumsq[t, :k] += (vals**2).sum(axis=1)

    def result(self, m):
        mean = self.sum / m
        if m > 1:
            var = np.maximum(self.sumsq - m * mean**2, 0.0) / (m - 1)
            se = np.sqrt(var / m)
        else:
            se = np.full_like(mean, np.nan)
        return mean, se


def _sweep(gamma: GammaOperator, seeds, contract):
    """Propagate probe seeds through Gamma, all source steps s at once.

    ``seeds(s)`` returns the p x m seed matrix for source step s.  At each
    target step t, ``contract(t, block)`` receives block[:, s, :] =
    Gamma_{t,s} seeds(s) for every s < t.
    """
    T = gamma.T
    block = None
    for t in range(1, T):
        fresh = gamma.seed(t - 1, seeds(t - 1))[:, None, :]
        if block is None:
            block = fresh
        else:
            p, k, m = block.shape
            moved = gamma.advance(t - 1, block.reshape(p, k * m)).reshape(p, k, m)
            block = np.concatenate([moved, fresh], axis=1)
        contract(t, block)


def _fanout(fns):
    def run(t, block):
        for fn in fns:
            fn(t, block)
    return run


def hutchinson_weights(traj: Trajectory, data: DataSet, m: int = DEFAULT_PROBES,
                       probe_seed: int = 0, include_sub: bool = True,
                       include_W: bool = True, include_A: bool = True,
                       chunk: int = 100) -> WeightSet:
    """Unbiased Rademacher-probe estimates of W, Ahat, Khat (and Atil, Ktil).

    W uses p-dimensional probes z with seeds z and left vectors Sigma z.  The
    other matrices use n-dimensional probes u with seeds X^T u (Ahat) and
    X^T S_s D_s u (Khat, Atil, Ktil).  Probes are shared across all (t, s)
    pairs and all matrices.  Diagonals of Khat and Ktil are exact sums.

    ``include_W=False`` skips the p-probe sweep (W is then NaN) and
    ``include_A=False`` skips the two n-probe sweeps (Ahat, Khat, Atil, Ktil
    NaN / absent); each sweep costs O(T^2 m |I| p).  ``stderr`` holds
    per-entry standard errors of the probe means.
    """
    if m < 1:
        raise ValueError("need at least one probe")
    X = data.X
    n, p = X.shape
    T = traj.T
    gamma = GammaOperator(traj, data)
    D, S, SD = _diag_parts(traj)
    identity_cov = np.array_equal(data.sigma_half, np.eye(p))
    include_sub = include_sub and include_A
    rng = np.random.default_rng(probe_seed)

    acc = {name: _Accumulator(T) for name in ("W", "Ahat", "Koff", "Atil", "Ktoff")}

    def contract(name, lefts):
        def fn(t, block):
            acc[name].add(t, np.einsum("pm,psm->sm", lefts[t], block))
        return fn

    done = 0
    while done < m:
        size = min(chunk, m - done)
        Z = _rademacher(rng, (p, size))
        U = _rademacher(rng, (n, size))
        done += size

        if include_W:
            SZ = Z if identity_cov else data.sigma @ Z
            _sweep(gamma, lambda s: Z, contract("W", [SZ] * T))
        if not include_A:
            continue

        XtU = X.T @ U
        XtDU = [X.T @ (D[:, [t]] * U) for t in range(T)]
        XtSDU = [X.T @ (SD[:, [t]] * U) for t in range(T)]
        _sweep(gamma, lambda s: XtU, contract("Ahat", XtDU))
        kfns = [contract("Koff", XtDU)]
        if include_sub:
            kfns += [contract("Atil", [XtU] * T), contract("Ktoff", XtSDU)]
        _sweep(gamma, lambda s: XtSDU[s], _fanout(kfns))

    nan = np.full((T, T), np.nan)
    W, se_W = acc["W"].result(m) if include_W else (nan, nan)
    Ahat, se_A = acc["Ahat"].result(m) if include_A else (nan, nan)
    Koff, se_K = acc["Koff"].result(m) if include_A else (nan, nan)
    Khat = np.diag(D.sum(axis=0)) - Koff
    stderr = {"W": se_W, "Ahat": se_A, "Khat": se_K}
    Atil = Ktil = None
    if include_sub:
        Atil, se_At = acc["Atil"].result(m)
        Ktoff, se_Kt = acc["Ktoff"].result(m)
        Ktil = np.diag(SD.sum(axis=0)) - Ktoff
        stderr.update(Atil=se_At, Ktil=se_Kt)
    return WeightSet(W=W, Ahat=Ahat, Khat=Khat, n=n, method="hutchinson", Atil=Atil,
                     Ktil=Ktil, probes=m, probe_seed=probe_seed, stderr=stderr)


def weights_auto(traj: Trajectory, data: DataSet, m: int = DEFAULT_PROBES,
                 probe_seed: int = 0, include_sub: bool = True) -> WeightSet:
    """Dense when p*T fits under the cap, probes otherwise."""
    if data.p * traj.T <= DENSE_CAP:
        return dense_weights(traj, data, include_sub=include_sub)
    return hutchinson_weights(traj, data, m=m, probe_seed=probe_seed, include_sub=include_sub)


def _default_tol(n):
    return 1e-10 * n


def _forward_solve(K, A):
    Wt = solve_triangular(K, A, lower=True)
    return np.tril(Wt, -1)


def solve_wtilde(ws: WeightSet, tol_diag: Optional[float] = None) -> WeightSet:
    """Populate Wtilde = Khat^{-1} Ahat by forward substitution."""
    tol = _default_tol(ws.n) if tol_diag is None else tol_diag
    diag = np.diag(ws.Khat)
    bad = np.flatnonzero(np.abs(diag) < tol)
    if bad.size:
        t = int(bad[0])
        raise SingularityError(t, float(diag[t]), tol)
    return dataclasses.replace(ws, Wtilde=_forward_solve(ws.Khat, ws.Ahat))


@dataclass(frozen=True)
class SubWeights:
    """Outcome of inverting the batch-restricted system Ktil W = Atil.

    ``W`` is None when some diagonal is below the singularity tolerance
    (listed in ``singular``).  ``small`` lists the steps whose diagonal fails
    to dominate the off-diagonal mass of its row; these are warnings only.
    """

    W: Optional[np.ndarray]
    diag: np.ndarray
    singular: Tuple[int, ...]
    small: Tuple[int, ...]


def solve_wtilde_sub(ws: WeightSet, tol_diag: Optional[float] = None,
                     dominance: float = 1.0) -> SubWeights:
    """Suboptimal weights Ktil^{-1} Atil, with diagnostics for weak diagonals."""
    if ws.Ktil is None or ws.Atil is None:
        raise ValueError("weight set carries no Ktil/Atil")
    tol = _default_tol(ws.n) if tol_diag is None else tol_diag
    K = ws.Ktil
    diag = np.diag(K).copy()
    singular = tuple(int(t) for t in np.flatnonzero(np.abs(diag) < tol))
    offdiag = np.abs(np.tril(K, -1)).sum(axis=1)
    small = tuple(int(t) for t in np.flatnonzero(np.abs(diag) < dominance * offdiag))
    if singular or small:
        warnings.warn(
            f"Ktil has weak diagonals: singular={list(singular)} small={list(small)}",
            SmallDiagonalWarning,
            stacklevel=2,
        )
    W = None if singular else _forward_solve(K, ws.Atil)
    return SubWeights(W=W, diag=diag, singular=singular, small=small)
