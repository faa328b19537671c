"""Closed-form solution for a constant rate of consumption.

Solves the free-boundary problem in dual space, assembles the two-power
dual function, and evaluates the value function and the optimal investment
policy by numerically inverting the dual variable y(w) = -V_w(w).  The
wealth domain is [a, w_s] with w_s = (c - A)/r the safe level.
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


def _require_constant(problem: ProblemSpec | ValidatedProblem) -> ValidatedProblem:
    if not isinstance(problem, ValidatedProblem):
        problem = validate(problem)
    if not problem.is_constant:
        raise FeasibilityError(["constant-consumption solver needs a constant rate"])
    if not problem.poverty.is_single_step:
        raise FeasibilityError(
            ["closed form requires single-step poverty; use the finite-difference solver"]
        )
    return problem


def g_value(problem: ValidatedProblem, y: float) -> float:
    """The boundary-ratio function g whose unique root in (0,1) is y_d/y_a."""
    pov = problem.poverty
    lam_ratio = pov.level_at_ruin() / problem.market.lam
    return ratio_equation(
        y,
        problem.derived.beta1,
        problem.derived.beta2,
        pov.a - problem.wbar,
        pov.d - problem.wbar,
        lam_ratio,
        pov.rho - lam_ratio,
    )


def g_scale(problem: ValidatedProblem, y: float) -> float:
    pov = problem.poverty
    lam_ratio = pov.level_at_ruin() / problem.market.lam
    return ratio_equation_scale(
        y,
        problem.derived.beta1,
        problem.derived.beta2,
        pov.a - problem.wbar,
        pov.d - problem.wbar,
        lam_ratio,
        pov.rho - lam_ratio,
    )


def solve_g_root(problem: ProblemSpec | ValidatedProblem) -> float:
    """The free-boundary ratio y_da in (0, 1)."""
    problem = _require_constant(problem)
    pov = problem.poverty
    lam_ratio = pov.level_at_ruin() / problem.market.lam
    return solve_boundary_ratio(
        problem.derived.beta1,
        problem.derived.beta2,
        pov.a - problem.wbar,
        pov.d - problem.wbar,
        lam_ratio,
        pov.rho - lam_ratio,
    )


@dataclass(frozen=True)
class ConstantFBPSolution:
    """Assembled free-boundary solution for constant consumption.

    Wraps the shared dual core; exposes the regime's conventional names
    (y_da, y_a, y_d, k0, k1, k2) and the value/policy evaluators.  Immutable
    and safe to share across threads.
    """

    core: PowerDual

    @property
    def problem(self) -> ValidatedProblem:
        return self.core.problem

    @property
    def y_da(self) -> float:
        return self.core.x_da

    @property
    def y_a(self) -> float:
        return self.core.x_a

    @property
    def y_d(self) -> float:
        return self.core.x_d

    @property
    def beta1(self) -> float:
        return self.core.e1

    @property
    def beta2(self) -> float:
        return self.core.e2

    # Raw dual coefficients (k0 on [0, y_d); k1, k2 on [y_d, y_a]).  These can
    # be astronomically scaled when beta1 is large, so they are recovered from
    # the boundary-normalized coefficients through exp/log and are meant for
    # export and cross-checks, not for evaluation.
    @property
    def k0(self) -> float:
        return powmul(self.core.c_in, self.y_d, -self.beta1)

    @property
    def k1(self) -> float:
        return powmul(self.core.c1, self.y_a, -self.beta1)

    @property
    def k2(self) -> float:
        return powmul(self.core.c2d, self.y_d, -self.beta2)

    def dual(self, y: float) -> float:
        return self.core.dual(y)

    def dual_y(self, y: float) -> float:
        return self.core.dual_x(y)

    def dual_yy(self, y: float) -> float:
        return self.core.dual_xx(y)

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

    def classify_pi_monotonicity(self) -> "PiMonotonicity":
        return classify_pi_monotonicity(self)

    def export_dict(self) -> dict:
        return {
            "y_da": self.y_da,
            "y_a": self.y_a,
            "y_d": self.y_d,
            "k0": self.k0,
            "k1": self.k1,
            "k2": self.k2,
            "beta1": self.beta1,
            "beta2": self.beta2,
        }


@dataclass(frozen=True)
class PiMonotonicity:
    """How the optimal policy moves with wealth on (a, d).

    kind is one of "decreasing", "increasing", "down_then_up"; w0 is the
    turning point in the mixed case.
    """

    kind: str
    w0: float | None = None


def assemble(problem: ProblemSpec | ValidatedProblem) -> ConstantFBPSolution:
    """Solve the free-boundary problem and build all dual coefficients.

    Raises ConsistencyError if the independent closed-form routes to the
    same coefficient disagree beyond 1e-8 relative.
    """
    problem = _require_constant(problem)
    core = assemble_dual(
        problem, problem.derived.beta1, problem.derived.beta2, problem.wbar
    )
    return ConstantFBPSolution(core=core)


solve = assemble


def pi_zero(problem: ProblemSpec | ValidatedProblem, w: float) -> float:
    """Optimal investment for pure ruin-probability minimization."""
    problem = _require_constant(problem)
    k = (problem.market.mu - problem.market.r) / problem.market.sigma**2
    return k * (problem.derived.beta1 - 1.0) * (problem.wbar - w)


def classify_pi_monotonicity(solution: ConstantFBPSolution) -> PiMonotonicity:
    """Classify the slope of pi_star on (a, d) via the two closed-form criteria.

    If neither the decreasing nor the increasing criterion holds, the slope
    changes sign exactly once and the turning point is found by root-finding
    on the dual-side sign function, then mapped back through y(w).
    """
    lhs_dec, lhs_inc = solution.core.monotonicity_thresholds()
    if lhs_dec >= 0.0:
        return PiMonotonicity(kind="decreasing")
    if lhs_inc <= 0.0:
        return PiMonotonicity(kind="increasing")
    return PiMonotonicity(kind="down_then_up", w0=solution.core.pi_turning_point())


def verify_pi_positive(solution: ConstantFBPSolution, n_check: int = 256) -> None:
    """Assert pi_star > 0 on a sample of (a, w_s); the closed form implies it."""
    a, ws = solution.problem.poverty.a, solution.problem.w_s
    for i in range(1, n_check):
        w = a + (ws - a) * i / n_check
        if w == solution.problem.poverty.d:
            continue
        if not solution.pi_star(w) > 0.0:
            raise PropertyViolation(f"pi_star({w}) = {solution.pi_star(w)} <= 0")
