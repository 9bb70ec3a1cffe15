"""Hybrid dynamical systems simulation and extremum-seeking toolkit."""

from .hybrid_core import (
    ContractViolation,
    Fragment,
    HybridArc,
    HybridSystem,
    HybridTimeDomain,
    JumpPolicy,
    NoDynamicsFromPoint,
    OutOfDomain,
    Solution,
    SolverConfig,
    Termination,
    empirical_average,
    inflate,
    sample_at,
    simulate,
)

__version__ = "0.1.0"
