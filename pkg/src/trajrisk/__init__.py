"""Generalization-error estimates along (proximal) GD / SGD trajectories."""

from .errors import CapacityError, ConfigError, KinkError, NumericalFailure, SingularityError
from .model import (
    DataSet,
    LossSpec,
    PenaltySpec,
    ProblemConfig,
    generate_dataset,
    prox,
    prox_jacobian_diag,
    psi,
    psi_prime,
)
from .risk import RiskSeries, estimate_rhat, estimate_rsub, estimate_rtilde, oracle_risk, risk_series
from .trajectory import BatchPlan, Schedule, Trajectory, apply_P, run_trajectory, sample_batches
from .weights import (
    GammaOperator,
    SubWeights,
    WeightSet,
    dense_weights,
    gamma_apply,
    hutchinson_weights,
    solve_wtilde,
    solve_wtilde_sub,
    weights_auto,
)

__version__ = "0.1.0"
