"""Synthetic linear-model data and the loss / penalty primitives.

Everything here is a pure function of its arguments.  Losses and penalties
act componentwise on numpy arrays, so callers pass whole residual vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError

COVARIANCES = ("identity", "diagonal", "dense")
NOISES = ("student_t", "gaussian")
LOSSES = ("huber", "pseudo_huber", "square")
PENALTIES = ("none", "l1")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ProblemConfig:
    """Size, design covariance, noise law and signal of one synthetic instance.

    ``cov_values`` holds the p diagonal entries for ``covariance="diagonal"``
    and the full p x p matrix for ``covariance="dense"``.  ``noise_param`` is
    the degrees of freedom for Student-t noise and the standard deviation for
    Gaussian noise.
    """

    n: int
    p: int
    covariance: str = "identity"
    cov_values: Optional[np.ndarray] = field(default=None, compare=False)
    noise: str = "student_t"
    noise_param: float = 2.0
    signal_strength: float = 10.0
    sparsity_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ConfigError(f"need n >= 1 and p >= 1, got n={self.n}, p={self.p}")
        if self.covariance not in COVARIANCES:
            raise ConfigError(f"unknown covariance {self.covariance!r}")
        if self.noise not in NOISES:
            raise ConfigError(f"unknown noise law {self.noise!r}")
        if not self.noise_param > 0:
            raise ConfigError("noise_param must be positive")
        if self.signal_strength < 0:
            raise ConfigError("signal_strength must be nonnegative")
        if not 0 < self.sparsity_fraction <= 1:
            raise ConfigError("sparsity_fraction must lie in (0, 1]")
        if self.nonzero_count < 1:
            raise ConfigError(
                f"sparsity_fraction*p = {self.sparsity_fraction * self.p} rounds to 0 nonzeros"
            )
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def nonzero_count(self) -> int:
        return round_half_up(self.sparsity_fraction * self.p)

    @property
    def gamma(self) -> float:
        """Aspect ratio p/n (diagnostic only)."""
        return self.p / self.n

    def covariance_matrix(self) -> np.ndarray:
        if self.covariance == "identity":
            return np.eye(self.p)
        vals = np.asarray(self.cov_values, dtype=float)
        if self.covariance == "diagonal":
            if vals.shape != (self.p,) or np.any(vals <= 0):
                raise ConfigError("diagonal covariance needs p positive entries")
            return np.diag(vals)
        if vals.shape != (self.p, self.p) or not np.allclose(vals, vals.T):
            raise ConfigError("dense covariance must be a symmetric p x p matrix")
        return vals

    def sigma_half(self) -> np.ndarray:
        """Lower Cholesky factor L with L L^T = Sigma."""
        if self.covariance == "identity":
            return np.eye(self.p)
        sigma = self.covariance_matrix()
        try:
            return np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise ConfigError("covariance is not positive definite") from exc

    @property
    def kappa(self) -> float:
        """Condition number of Sigma (diagnostic only, never enforced)."""
        return float(np.linalg.cond(self.covariance_matrix()))


@dataclass(frozen=True)
class DataSet:
    X: np.ndarray
    y: np.ndarray
    b_star: np.ndarray
    eps: np.ndarray
    sigma_half: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def sigma(self) -> np.ndarray:
        return self.sigma_half @ self.sigma_half.T

    def with_design(self, X: np.ndarray, regenerate_y: bool = True) -> "DataSet":
        """Copy with a replaced design; y follows X b* + eps unless told otherwise."""
        y = X @ self.b_star + self.eps if regenerate_y else self.y
        return DataSet(X=X, y=y, b_star=self.b_star, eps=self.eps, sigma_half=self.sigma_half)


def _freeze(*arrays):
    for a in arrays:
        a.flags.writeable = False


def generate_dataset(cfg: ProblemConfig) -> DataSet:
    """Draw ``X`` with N(0, Sigma) rows, a flat sparse ``b_star`` and noise."""
    sigma_half = cfg.sigma_half()
    rng = np.random.default_rng(cfg.seed)
    Z = rng.standard_normal((cfg.n, cfg.p))
    X = Z if cfg.covariance == "identity" else Z @ sigma_half.T

    k = cfg.nonzero_count
    b_star = np.zeros(cfg.p)
    b_star[:k] = math.sqrt(cfg.signal_strength / k)

    if cfg.noise == "student_t":
        # t(dof) = N(0,1) / sqrt(chi2_dof / dof)
        z = rng.standard_normal(cfg.n)
        chi2 = rng.chisquare(cfg.noise_param, cfg.n)
        eps = z / np.sqrt(chi2 / cfg.noise_param)
    else:
        eps = cfg.noise_param * rng.standard_normal(cfg.n)

    y = X @ b_star + eps
    _freeze(X, y, b_star, eps, sigma_half)
    return DataSet(X=X, y=y, b_star=b_star, eps=eps, sigma_half=sigma_half)


@dataclass(frozen=True)
class LossSpec:
    kind: str = "huber"
    delta: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSSES:
            raise ConfigError(f"unknown loss {self.kind!r}")
        if not self.delta > 0:
            raise ConfigError("loss delta must be positive")


@dataclass(frozen=True)
class PenaltySpec:
    kind: str = "none"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in PENALTIES:
            raise ConfigError(f"unknown penalty {self.kind!r}")
        if self.lam < 0:
            raise ConfigError("penalty lambda must be nonnegative")


def rho(r, loss: LossSpec):
    """Loss value, for completeness and for differentiating ``psi`` in tests."""
    r = np.asarray(r, dtype=float)
    d = loss.delta
    if loss.kind == "square":
        return 0.5 * r**2
    if loss.kind == "huber":
        a = np.abs(r)
        return np.where(a <= d, 0.5 * r**2, d * a - 0.5 * d**2)
    return d**2 * (np.sqrt(1.0 + (r / d) ** 2) - 1.0)


def psi(r, loss: LossSpec):
    """Derivative of the loss, applied componentwise."""
    r = np.asarray(r, dtype=float)
    if loss.kind == "square":
        return r.copy()
    d = loss.delta
    if loss.kind == "huber":
        return np.clip(r, -d, d)
    # clip only removes rounding above delta for huge |r|
    return np.clip(r / np.sqrt(1.0 + (r / d) ** 2), -d, d)


def psi_prime(r, loss: LossSpec):
    """Second derivative of the loss; Huber takes the value 1 at |r| = delta."""
    r = np.asarray(r, dtype=float)
    if loss.kind == "square":
        return np.ones_like(r)
    d = loss.delta
    if loss.kind == "huber":
        return (np.abs(r) <= d).astype(float)
    return (1.0 + (r / d) ** 2) ** -1.5


def prox(v, eta: float, pen: PenaltySpec):
    """Proximal map of ``eta * g``: identity or soft-thresholding at lambda*eta."""
    v = np.asarray(v, dtype=float)
    if pen.kind == "none":
        return v.copy()
    theta = pen.lam * eta
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


def prox_jacobian_diag(v_next, pen: PenaltySpec):
    """Diagonal of the prox Jacobian, read off the already-thresholded point."""
    v_next = np.asarray(v_next, dtype=float)
    if pen.kind == "none":
        return np.ones_like(v_next)
    return (v_next != 0).astype(float)
