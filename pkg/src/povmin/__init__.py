"""Minimum expected lifetime poverty with a ruin penalty.

Closed-form solvers for constant and proportional consumption, a
finite-difference solver for general staircase poverty functions, and a
Monte Carlo engine to verify policy optimality.
"""

from . import constant, hjb, montecarlo, proportional
from .errors import (
    BracketError,
    ConfigError,
    ConsistencyError,
    ConvexityLoss,
    DomainError,
    FeasibilityError,
    NonConvergence,
    OptimalityViolation,
    OrderingViolation,
    PolicyError,
    PovminError,
    PropertyViolation,
)
from .model import (
    ConstantConsumption,
    DerivedConstants,
    MarketParams,
    PovertySpec,
    ProblemSpec,
    ProportionalConsumption,
    StaircasePoverty,
    ValidatedProblem,
    check,
    exponents,
    load_spec,
    safe_level,
    spec_from_dict,
    spec_to_dict,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "MarketParams",
    "DerivedConstants",
    "ConstantConsumption",
    "ProportionalConsumption",
    "PovertySpec",
    "StaircasePoverty",
    "ProblemSpec",
    "ValidatedProblem",
    "validate",
    "check",
    "exponents",
    "safe_level",
    "spec_to_dict",
    "spec_from_dict",
    "load_spec",
    "constant",
    "proportional",
    "hjb",
    "montecarlo",
    "PovminError",
    "FeasibilityError",
    "DomainError",
    "BracketError",
    "ConsistencyError",
    "PropertyViolation",
    "NonConvergence",
    "ConvexityLoss",
    "OrderingViolation",
    "ConfigError",
    "PolicyError",
    "OptimalityViolation",
    "__version__",
]
