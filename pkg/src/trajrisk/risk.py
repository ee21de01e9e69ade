"""Oracle generalization error along a trajectory and its data-driven estimates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .model import DataSet
from .trajectory import Trajectory
from .weights import SubWeights, WeightSet, solve_wtilde, solve_wtilde_sub


@dataclass(frozen=True)
class RiskSeries:
    r_true: np.ndarray
    r_hat: np.ndarray
    noise_term: float
    r_tilde: Optional[np.ndarray] = None
    r_sub: Optional[np.ndarray] = None

    @property
    def risk_only(self) -> np.ndarray:
        return self.r_true - self.noise_term


def oracle_risk(traj: Trajectory, data: DataSet) -> Tuple[np.ndarray, float]:
    """r_t = ||Sigma^{1/2}(b_t - b*)||^2 + ||eps||^2/n, plus the noise term."""
    H = data.sigma_half.T @ (traj.B - data.b_star[:, None])
    noise = float(data.eps @ data.eps) / data.n
    return np.sum(H**2, axis=0) + noise, noise


def _corrected_residual_risk(traj: Trajectory, weights: np.ndarray) -> np.ndarray:
    # column t: R e_t + sum_{s<t} w_{t,s} F e_s
    Wl = np.tril(np.asarray(weights, dtype=float), -1)
    M = traj.R + traj.F @ Wl.T
    return np.sum(M**2, axis=0) / traj.R.shape[0]


def estimate_rhat(traj: Trajectory, W: np.ndarray) -> np.ndarray:
    """Estimate built from W, which needs Sigma."""
    return _corrected_residual_risk(traj, W)


def estimate_rtilde(traj: Trajectory, ws: WeightSet) -> np.ndarray:
    """Estimate built from Wtilde = Khat^{-1} Ahat; needs neither Sigma nor b*."""
    if ws.Wtilde is None:
        ws = solve_wtilde(ws)
    return _corrected_residual_risk(traj, ws.Wtilde)


def estimate_rsub(traj: Trajectory, ws: WeightSet,
                  sub: Optional[SubWeights] = None) -> Optional[np.ndarray]:
    """Estimate built from Ktil^{-1} Atil; None when Ktil is singular."""
    if sub is None:
        sub = solve_wtilde_sub(ws)
    if sub.W is None:
        return None
    return _corrected_residual_risk(traj, sub.W)


def risk_series(traj: Trajectory, data: DataSet, ws: WeightSet,
                sub: Optional[SubWeights] = None) -> RiskSeries:
    r_true, noise = oracle_risk(traj, data)
    r_hat = estimate_rhat(traj, ws.W) if np.all(np.isfinite(ws.W)) else None
    r_tilde = estimate_rtilde(traj, ws)
    r_sub = None
    if ws.Ktil is not None:
        r_sub = estimate_rsub(traj, ws, sub)
    return RiskSeries(r_true=r_true, r_hat=r_hat, noise_term=noise, r_tilde=r_tilde, r_sub=r_sub)
