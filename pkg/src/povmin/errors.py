"""Exception types shared across the solver modules."""

from __future__ import annotations


class PovminError(Exception):
    """Base class for all library errors."""


class FeasibilityError(PovminError):
    """Problem specification violates one or more model assumptions.

    Carries the complete list of violations so a CLI user can fix the
    spec in one pass.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DomainError(PovminError):
    """Evaluation requested outside the wealth domain of a solution."""


class BracketError(PovminError):
    """Root bracketing failed: no sign change on the search interval."""


class ConsistencyError(PovminError):
    """Independent closed-form expressions for the same quantity disagree."""


class PropertyViolation(PovminError):
    """A structural property the solution must satisfy failed numerically."""


class NonConvergence(PovminError):
    """Iterative solver exceeded its iteration cap."""

    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(last residual {residual:.3e})"
        )


class ConvexityLoss(PovminError):
    """Discrete solution lost convexity at one or more interior nodes."""


class OrderingViolation(PovminError):
    """Comparison check between two value tables failed node-wise."""

    def __init__(self, message, nodes):
        self.nodes = list(nodes)
        super().__init__(message)


class ConfigError(PovminError):
    """Simulation configuration violates its invariants."""


class PolicyError(PovminError):
    """A policy evaluator returned non-finite or otherwise unusable values."""


class OptimalityViolation(PovminError):
    """An alternative policy beat the candidate optimum beyond tolerance."""
