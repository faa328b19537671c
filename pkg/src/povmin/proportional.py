"""Closed-form solution for consumption proportional to wealth, c(w) = kappa*w.

Same dual free-boundary construction as the constant regime with the
exponent pair (gamma1, gamma2) and the annuity floor A/(kappa - r) as
pivot; the wealth domain is [a, infinity) and the value function decays
like (w - A/(kappa-r))^(-gamma1/(1-gamma1)) far out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .dualcore import (
    PowerDual,
    assemble_dual,
    ratio_equation,
    ratio_equation_scale,
    solve_boundary_ratio,
)
from .errors import FeasibilityError, PropertyViolation
from .model import ProblemSpec, ValidatedProblem, validate
from .rootfind import powmul


def _require_proportional(problem: ProblemSpec | ValidatedProblem) -> ValidatedProblem:
    if not isinstance(problem, ValidatedProblem):
        problem = validate(problem)
    if problem.is_constant:
        raise FeasibilityError(["proportional-consumption solver needs c(w) = kappa*w"])
    if not problem.poverty.is_single_step:
        raise FeasibilityError(
            ["closed form requires single-step poverty; use the finite-difference solver"]
        )
    return problem


def h_value(problem: ValidatedProblem, z: float) -> float:
    """The boundary-ratio function h whose unique root in (0,1) is z_d/z_a."""
    pov = problem.poverty
    lam_ratio = pov.level_at_ruin() / problem.market.lam
    return ratio_equation(
        z,
        problem.derived.gamma1,
        problem.derived.gamma2,
        pov.a - problem.abar,
        pov.d - problem.abar,
        lam_ratio,
        pov.rho - lam_ratio,
    )


def h_scale(problem: ValidatedProblem, z: float) -> float:
    pov = problem.poverty
    lam_ratio = pov.level_at_ruin() / problem.market.lam
    return ratio_equation_scale(
        z,
        problem.derived.gamma1,
        problem.derived.gamma2,
        pov.a - problem.abar,
        pov.d - problem.abar,
        lam_ratio,
        pov.rho - lam_ratio,
    )


def solve_h_root(problem: ProblemSpec | ValidatedProblem) -> float:
    """The free-boundary ratio z_da in (0, 1)."""
    problem = _require_proportional(problem)
    pov = problem.poverty
    lam_ratio = pov.level_at_ruin() / problem.market.lam
    return solve_boundary_ratio(
        problem.derived.gamma1,
        problem.derived.gamma2,
        pov.a - problem.abar,
        pov.d - problem.abar,
        lam_ratio,
        pov.rho - lam_ratio,
    )


@dataclass(frozen=True)
class ProportionalFBPSolution:
    """Assembled free-boundary solution for proportional consumption."""

    core: PowerDual

    @property
    def problem(self) -> ValidatedProblem:
        return self.core.problem

    @property
    def z_da(self) -> float:
        return self.core.x_da

    @property
    def z_a(self) -> float:
        return self.core.x_a

    @property
    def z_d(self) -> float:
        return self.core.x_d

    @property
    def gamma1(self) -> float:
        return self.core.e1

    @property
    def gamma2(self) -> float:
        return self.core.e2

    @property
    def k4(self) -> float:
        return powmul(self.core.c_in, self.z_d, -self.gamma1)

    @property
    def k5(self) -> float:
        return powmul(self.core.c1, self.z_a, -self.gamma1)

    @property
    def k6(self) -> float:
        return powmul(self.core.c2d, self.z_d, -self.gamma2)

    def dual(self, z: float) -> float:
        return self.core.dual(z)

    def dual_z(self, z: float) -> float:
        return self.core.dual_x(z)

    def dual_zz(self, z: float) -> float:
        return self.core.dual_xx(z)

    def invert_dual(self, w: float) -> float:
        return self.core.invert_dual(w)

    def value(self, w: float) -> float:
        return self.core.value(w)

    def value_w(self, w: float) -> float:
        return self.core.value_w(w)

    def value_ww(self, w: float) -> float:
        return self.core.value_ww(w)

    def pi_star(self, w: float, side: str = "+") -> float:
        return self.core.pi_star(w, side=side)

    def pi_star_slope(self, w: float) -> float:
        return self.core.pi_star_slope(w)

    def pi_zero(self, w: float) -> float:
        return self.core.pi_zero(w)

    def pi_a_plus(self) -> float:
        return self.core.pi_at_ruin()

    def pi_d_minus(self) -> float:
        return self.core.pi_below_poverty_level()

    def classify_pi_monotonicity(self, n_check: int = 1000) -> "PiSlopeReport":
        return classify_pi_monotonicity(self, n_check=n_check)

    def export_dict(self) -> dict:
        return {
            "z_da": self.z_da,
            "z_a": self.z_a,
            "z_d": self.z_d,
            "k4": self.k4,
            "k5": self.k5,
            "k6": self.k6,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
        }


@dataclass(frozen=True)
class PiSlopeReport:
    """Outcome of the slope verification: always increasing on both intervals.

    min_slope is the smallest finite-difference slope found on (a, d); the
    slope on (d, infinity) is the exact linear coefficient.
    """

    kind: str
    min_slope: float
    linear_slope: float


def assemble(problem: ProblemSpec | ValidatedProblem) -> ProportionalFBPSolution:
    """Solve the free-boundary problem and build all dual coefficients."""
    problem = _require_proportional(problem)
    core = assemble_dual(
        problem, problem.derived.gamma1, problem.derived.gamma2, problem.abar
    )
    return ProportionalFBPSolution(core=core)


solve = assemble


def pi_zero(problem: ProblemSpec | ValidatedProblem, w: float) -> float:
    """Ruin-probability-minimizing investment under proportional consumption."""
    problem = _require_proportional(problem)
    k = (problem.market.mu - problem.market.r) / problem.market.sigma**2
    return k * (1.0 - problem.derived.gamma1) * (w - problem.abar)


def classify_pi_monotonicity(
    solution: ProportionalFBPSolution, n_check: int = 1000, tol: float = 1e-8
) -> PiSlopeReport:
    """Verify that pi_star increases with wealth on (a, d) and on (d, inf).

    The closed form guarantees it; this runs the finite-difference slope
    check anyway and raises PropertyViolation on a negative slope beyond
    tolerance, which would signal an implementation bug.
    """
    a, d = solution.problem.poverty.a, solution.problem.poverty.d
    h = (d - a) / (n_check + 1) * 1e-3
    min_slope = math.inf
    worst_w = None
    for i in range(1, n_check + 1):
        w = a + (d - a) * i / (n_check + 1)
        slope = (solution.pi_star(w + h) - solution.pi_star(w - h)) / (2.0 * h)
        if slope < min_slope:
            min_slope = slope
            worst_w = w
    if min_slope < -tol:
        raise PropertyViolation(
            f"pi_star slope {min_slope} < 0 at w={worst_w} in (a, d)"
        )
    k = (solution.problem.market.mu - solution.problem.market.r) / (
        solution.problem.market.sigma**2
    )
    linear_slope = k * (1.0 - solution.gamma1)
    return PiSlopeReport(
        kind="increasing_both_intervals", min_slope=min_slope, linear_slope=linear_slope
    )
