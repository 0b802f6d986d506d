"""Fronthaul-aware downlink power allocation for large-antenna cellular networks.

Generates Monte Carlo network drops, builds closed-form SINR models for MRT
and ZF precoding, and maximizes weighted sum rate or energy efficiency by
successive convex approximation under per-link or sum fronthaul capacity
limits. A compiled inner-loop kernel is used when available; a pure numpy
implementation is always present.
"""

from .backend import active_backend, available_backends, set_backend
from .bounds import make_context, rate_lower_bound, rate_upper_bound
from .config import ConfigError, NetworkConfig, thermal_noise_watts
from .experiments import ResultRow, SweepSpec, baseline_equal_power, run_sweep
from .radio import (FronthaulConstraint, PowerModel, RadioModel,
                    build_radio_model, energy_efficiency, fronthaul_load,
                    sinr, user_rates)
from .scenario import AssociationRule, Scenario, generate_drop
from .solvers import (InfeasibleStartError, SolveReport, SolverConfig,
                      solve_ee, solve_wsr)

__version__ = "0.1.0"

__all__ = [
    "AssociationRule", "ConfigError", "FronthaulConstraint",
    "InfeasibleStartError", "NetworkConfig", "PowerModel", "RadioModel",
    "ResultRow", "Scenario", "SolveReport", "SolverConfig", "SweepSpec",
    "active_backend", "available_backends", "baseline_equal_power",
    "build_radio_model", "energy_efficiency", "fronthaul_load",
    "generate_drop", "make_context", "rate_lower_bound", "rate_upper_bound",
    "run_sweep", "set_backend", "sinr", "solve_ee", "solve_wsr",
    "thermal_noise_watts", "user_rates", "__version__",
]
