"""Stochastic proximal-gradient and penalized EM solvers for latent-variable
mixed models, with a linear mixed toy model (closed-form oracles) and a
two-compartment pharmacokinetic non-linear mixed model (MCMC E-steps)."""

from ._kernels import BACKEND
from .engine import EngineConfig, RunTrace, run
from .penalty import PenaltySpec, lambda_max, penalty_value, prox
from .schedules import ScheduleSpec, compute_D, delta_at, gamma_at, validate_H5

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EngineConfig",
    "PenaltySpec",
    "RunTrace",
    "ScheduleSpec",
    "compute_D",
    "delta_at",
    "gamma_at",
    "lambda_max",
    "penalty_value",
    "prox",
    "run",
    "validate_H5",
    "__version__",
]
