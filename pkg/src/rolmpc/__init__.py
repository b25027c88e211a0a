"""Robust output-lifted learning MPC for difference-flat systems."""

from .errors import (
    AssumptionViolated,
    DimensionMismatch,
    DomainError,
    EmptyResult,
    Infeasible,
    InfeasibleMpc,
    NotContractive,
    RiccatiDivergence,
    RolmpcError,
    SolverFailure,
    SpecViolation,
    StepCapExceeded,
)
from .flat_system import SystemModel
from .geometry import Box, Ellipsoid, VPolytope
from .lmpc import IterationRecord, LmpcConfig, apply_policy, run_algorithm
from .safe_set import GoalSpec, SafeSetStore
from .tightening import TightenedConstraints

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolated", "DimensionMismatch", "DomainError", "EmptyResult", "Infeasible", "InfeasibleMpc",
    "NotContractive", "RiccatiDivergence", "RolmpcError", "SolverFailure", "SpecViolation", "StepCapExceeded",
    "SystemModel", "Box", "Ellipsoid", "VPolytope", "IterationRecord", "LmpcConfig", "apply_policy",
    "run_algorithm", "GoalSpec", "SafeSetStore", "TightenedConstraints",
]
