"""Shared machinery for the two closed-form regimes.

Both consumption rules lead to the same free-boundary structure in dual
space: a two-power dual function on [0, x_a] with an inner one-power piece
below x_d, a boundary ratio x_da = x_d/x_a that is the unique root of a
five-term function on (0, 1), and a Legendre transform back to wealth.
The regimes differ only in the exponent pair (e1, e2) of the dual ODE and
the pivot wealth (the safe level for constant consumption, the annuity
floor A/(kappa - r) for proportional consumption).  This module implements
that common core once; the regime modules wrap it with their own names,
domains, and checks.

Sign conventions: G_x := x - pivot is negative for the constant regime
(wealth sits below the safe level) and positive for the proportional one
(wealth sits above the annuity floor); every shared formula is written in
terms of G so it covers both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConsistencyError, DomainError
from .model import ValidatedProblem
from .rootfind import bisect_root, powmul

# Bracket shrink for the ratio root on (0, 1); the proofs guarantee a sign
# change strictly inside, so this only guards the open endpoints.
_BRACKET_EPS = 1e-12
_C1_FIT_TOL = 1e-8


def ratio_equation_terms(
    x: float, e1: float, e2: float, g_a: float, g_d: float, lam_ratio: float, net: float
) -> tuple[float, float, float, float, float]:
    """The five terms of the boundary-ratio equation at x."""
    return (
        -e1 * (1.0 - e2) * g_a * lam_ratio * x ** (e1 - e2),
        -(e1 - e2) * g_a * net * x**e1,
        (e1 - e2) * g_d * lam_ratio * x ** (1.0 - e2),
        (e1 - e2) * g_d * net * x,
        -e2 * (e1 - 1.0) * g_a * lam_ratio,
    )


def ratio_equation(x, e1, e2, g_a, g_d, lam_ratio, net) -> float:
    return math.fsum(ratio_equation_terms(x, e1, e2, g_a, g_d, lam_ratio, net))


def ratio_equation_scale(x, e1, e2, g_a, g_d, lam_ratio, net) -> float:
    """Natural floating-point scale of the ratio equation at x."""
    return sum(abs(t) for t in ratio_equation_terms(x, e1, e2, g_a, g_d, lam_ratio, net))


def ratio_equation_slope(x, e1, e2, g_a, g_d, lam_ratio, net) -> float:
    """Derivative of the ratio equation in its factored (sign-revealing) form."""
    return (
        (e1 - e2)
        * ((1.0 - e2) * lam_ratio * x**-e2 + net)
        * (-e1 * g_a * x ** (e1 - 1.0) + g_d)
    )


def solve_boundary_ratio(e1, e2, g_a, g_d, lam_ratio, net) -> float:
    """Unique root of the ratio equation in (0, 1).

    Bracketed bisection down to an interval of width 1e-14, then a few
    safeguarded Newton polish steps; the equation has extreme exponents, so
    robustness beats speed here.
    """

    def f(x):
        return ratio_equation(x, e1, e2, g_a, g_d, lam_ratio, net)

    def fp(x):
        return ratio_equation_slope(x, e1, e2, g_a, g_d, lam_ratio, net)

    return bisect_root(f, _BRACKET_EPS, 1.0 - _BRACKET_EPS, xtol=1e-14, fprime=fp)


@dataclass(frozen=True)
class PowerDual:
    """Solved free-boundary dual for one regime.

    The dual function on [0, x_a] is

        inner  (0 <= x < x_d):   C_in*(x/x_d)^e1 + pivot*x
        middle (x_d <= x <= x_a): C1*(x/x_a)^e1 + C2d*(x/x_d)^e2
                                  + pivot*x + lam_ratio

    with all coefficients stored pre-multiplied by the matching boundary
    power so that every power evaluated at run time has a base in (0, 1]
    or an exponent that keeps it bounded; raw (unnormalized) coefficients
    are recovered through exp/log only for export.
    """

    problem: ValidatedProblem
    e1: float
    e2: float
    pivot: float
    x_da: float
    x_a: float
    x_d: float
    lam_ratio: float
    net: float
    c_in: float  # inner coefficient times x_d^e1
    c1: float  # middle e1-coefficient times x_a^e1
    c2a: float  # middle e2-coefficient times x_a^e2
    c1d: float  # middle e1-coefficient times x_d^e1
    c2d: float  # middle e2-coefficient times x_d^e2

    @property
    def a(self) -> float:
        return self.problem.poverty.a

    @property
    def d(self) -> float:
        return self.problem.poverty.d

    @property
    def rho(self) -> float:
        return self.problem.poverty.rho

    @property
    def k_merton(self) -> float:
        mkt = self.problem.market
        return (mkt.mu - mkt.r) / mkt.sigma**2

    @property
    def domain_hi(self) -> float:
        return self.problem.w_s

    # -- dual-side evaluation -------------------------------------------------

    def _mid_powers(self, x: float) -> tuple[float, float]:
        return (x / self.x_a) ** self.e1, (x / self.x_d) ** self.e2

    def dual(self, x: float) -> float:
        if x < self.x_d:
            return self.c_in * (x / self.x_d) ** self.e1 + self.pivot * x
        s, u = self._mid_powers(x)
        return self.c1 * s + self.c2d * u + self.pivot * x + self.lam_ratio

    def dual_x(self, x: float) -> float:
        if x == 0.0:
            # e1 > 1 in the constant regime (finite slope = pivot);
            # e1 < 1 in the proportional regime (slope diverges).
            return self.pivot if self.e1 > 1.0 else math.inf
        if x < self.x_d:
            return self.e1 * self.c_in * (x / self.x_d) ** self.e1 / x + self.pivot
        s, u = self._mid_powers(x)
        return (self.e1 * self.c1 * s + self.e2 * self.c2d * u) / x + self.pivot

    def dual_xx(self, x: float) -> float:
        if x < self.x_d:
            return self.e1 * (self.e1 - 1.0) * self.c_in * (x / self.x_d) ** self.e1 / x**2
        s, u = self._mid_powers(x)
        return (
            self.e1 * (self.e1 - 1.0) * self.c1 * s
            + self.e2 * (self.e2 - 1.0) * self.c2d * u
        ) / x**2

    def dual_xxx(self, x: float) -> float:
        if x < self.x_d:
            e1 = self.e1
            return e1 * (e1 - 1.0) * (e1 - 2.0) * self.c_in * (x / self.x_d) ** e1 / x**3
        s, u = self._mid_powers(x)
        e1, e2 = self.e1, self.e2
        return (
            e1 * (e1 - 1.0) * (e1 - 2.0) * self.c1 * s
            + e2 * (e2 - 1.0) * (e2 - 2.0) * self.c2d * u
        ) / x**3

    # -- wealth <-> dual ------------------------------------------------------

    def invert_dual(self, w: float) -> float:
        """The dual point x(w) in [x_d, x_a] with dual_x(x) = w, for w in [a, d].

        The map is strictly decreasing (the dual is strictly concave), so a
        bisection bracket never fails; one Newton polish finishes the job.
        """
        if not (self.a - 1e-12 <= w <= self.d + 1e-12):
            raise DomainError(f"invert_dual needs w in [{self.a}, {self.d}], got {w}")
        if w <= self.a:
            return self.x_a
        if w >= self.d:
            return self.x_d
        return bisect_root(
            lambda x: self.dual_x(x) - w,
            self.x_d,
            self.x_a,
            xtol=1e-12 * self.x_a,
            fprime=self.dual_xx,
        )

    def outer_dual_point(self, w: float) -> float:
        """x(w) on the inner dual piece, for wealth above the poverty level."""
        g_w = w - self.pivot
        g_d = self.d - self.pivot
        return self.x_d * (g_w / g_d) ** (1.0 / (self.e1 - 1.0))

    def dual_point(self, w: float) -> float:
        self._check_domain(w, low=self.a)
        if w <= self.d:
            return self.invert_dual(w)
        return self.outer_dual_point(w)

    # -- value function and derivatives ---------------------------------------

    def _check_domain(self, w: float, low: float) -> None:
        hi = self.domain_hi
        tol = 1e-9 * max(1.0, abs(self.d))
        if w < low - tol or (math.isfinite(hi) and w > hi + tol):
            raise DomainError(
                f"wealth {w} outside [{low}, {hi}] for this solution"
            )

    def value(self, w: float) -> float:
        """Minimum expected discounted poverty cost plus ruin penalty at wealth w."""
        self._check_domain(w, low=self.a)
        if w >= self.d:
            return self.value_power_branch(w)
        return self.value_dual_branch(w)

    def value_dual_branch(self, w: float) -> float:
        """Middle-region value via dual inversion; valid on [a, d]."""
        x = self.invert_dual(w)
        s, u = self._mid_powers(x)
        return (
            (1.0 - self.e1) * self.c1 * s
            + (1.0 - self.e2) * self.c2d * u
            + self.lam_ratio
        )

    def value_power_branch(self, w: float) -> float:
        """Explicit power-law value; valid on [d, domain_hi]."""
        g_w = w - self.pivot
        g_d = self.d - self.pivot
        ratio = g_w / g_d
        if ratio < 0.0:
            ratio = 0.0  # w at the safe level exactly, up to roundoff
        e1 = self.e1
        return ((1.0 - e1) / e1) * g_d * self.x_d * ratio ** (e1 / (e1 - 1.0))

    def value_w(self, w: float) -> float:
        return -self.dual_point(w)

    def value_ww(self, w: float) -> float:
        return -1.0 / self.dual_xx(self.dual_point(w))

    # -- optimal policy --------------------------------------------------------

    def pi_zero(self, w: float) -> float:
        """Ruin-probability-minimizing investment, linear in wealth."""
        return self.k_merton * (1.0 - self.e1) * (w - self.pivot)

    def pi_star(self, w: float, side: str = "+") -> float:
        """Optimal amount in the risky asset at wealth w.

        The policy jumps downward at the poverty level d, so evaluation at
        exactly w = d needs a side: "+" (default, matches the simulation
        convention) or "-".
        """
        self._check_domain(w, low=self.a)
        if w <= self.a:
            raise DomainError(f"pi_star is defined on (a, w_s], got w={w}")
        if w > self.d or (w == self.d and side != "-"):
            return self.pi_zero(w)
        x = self.invert_dual(w)
        return self._pi_of_dual(x)

    def _pi_of_dual(self, x: float) -> float:
        s, u = self._mid_powers(x)
        e1, e2 = self.e1, self.e2
        return (
            self.k_merton
            * (e1 * (1.0 - e1) * self.c1 * s + e2 * (1.0 - e2) * self.c2d * u)
            / x
        )

    def pi_star_slope(self, w: float) -> float:
        """d(pi_star)/dw on (a, d), analytic through the dual chain rule."""
        x = self.invert_dual(w)
        s, u = self._mid_powers(x)
        e1, e2 = self.e1, self.e2
        dpi_dx = (
            -self.k_merton
            * (e1 * (1.0 - e1) ** 2 * self.c1 * s + e2 * (1.0 - e2) ** 2 * self.c2d * u)
            / x**2
        )
        return dpi_dx / self.dual_xx(x)

    def pi_at_ruin(self) -> float:
        """Closed-form pi_star(a+)."""
        q = powmul(self.lam_ratio, self.x_da, -self.e2)
        return (
            self.k_merton
            * (1.0 - self.e1)
            * (self.a - self.pivot)
            * ((1.0 - self.e2) * q + self.net)
            / (q + self.net)
        )

    def pi_below_poverty_level(self) -> float:
        """Closed-form pi_star(d-)."""
        g_a = self.a - self.pivot
        g_d = self.d - self.pivot
        denom = (
            powmul(self.lam_ratio, self.x_da, 1.0 - self.e2) + self.net * self.x_da
        )
        return (
            self.k_merton
            * (1.0 - self.e1)
            * (g_d - self.e2 * g_a * self.lam_ratio / denom)
        )

    # -- policy monotonicity ---------------------------------------------------

    def pi_slope_sign_function(self, x: float) -> float:
        """Function of the dual point whose sign is the sign of d(pi_star)/dw."""
        e1, e2 = self.e1, self.e2
        coef = e1 * (1.0 - e2) * self.lam_ratio + (e1 - e2) * self.net * powmul(
            1.0, self.x_da, e2
        )
        return (1.0 - e1) * coef * (x / self.x_a) ** (e1 - e2) - e2 * (
            1.0 - e2
        ) ** 2 * self.lam_ratio

    def monotonicity_thresholds(self) -> tuple[float, float]:
        """(decreasing-case lhs, increasing-case lhs) of the two criteria.

        pi_star decreases on (a, d) iff the first is >= 0 and increases iff
        the second is <= 0; otherwise the slope changes sign once, downward
        then upward.
        """
        e1, e2 = self.e1, self.e2
        lam_ratio, net, x = self.lam_ratio, self.net, self.x_da
        lhs_dec = (e1 - 1.0) * (e1 - e2) * net * x**e1 + (1.0 - e2) * lam_ratio * (
            e1 * (e1 - 1.0) * x ** (e1 - e2) + e2 * (1.0 - e2)
        )
        lhs_inc = (e1 - 1.0) * net * powmul(1.0, x, e2) + (1.0 - e2) * (
            e1 + e2 - 1.0
        ) * lam_ratio
        return lhs_dec, lhs_inc

    def pi_turning_point(self) -> float:
        """Wealth w0 where the policy slope changes sign (mixed case only)."""
        x0 = bisect_root(self.pi_slope_sign_function, self.x_d, self.x_a, xtol=1e-14)
        return self.dual_x(x0)


def assemble_dual(problem: ValidatedProblem, e1: float, e2: float, pivot: float) -> PowerDual:
    """Solve the boundary-ratio equation and build the dual with all coefficients.

    Performs the internal cross-checks the closed form affords: the two
    independent expressions for the outer boundary x_a must agree, and the
    middle-piece coefficients obtained from the x_a-side boundary conditions
    must match the ones forced by the C1 fit at x_d.
    """
    pov = problem.poverty
    lam = problem.market.lam
    lam_ratio = pov.level_at_ruin() / lam
    net = pov.rho - lam_ratio
    g_a = pov.a - pivot
    g_d = pov.d - pivot

    x_da = solve_boundary_ratio(e1, e2, g_a, g_d, lam_ratio, net)

    q = powmul(lam_ratio, x_da, -e2)  # (l/lam) * x_da^(-e2)
    x_a = (e1 / (1.0 - e1)) * (q + net) / g_a
    # Independent expression for x_a obtained by eliminating the other
    # coefficient pair through the C1 fit; agreement is a transcription check
    # on the whole coefficient assembly.
    denom_alt = e1 * (1.0 - e2) * g_a * x_da**e1 - (e1 - e2) * g_d * x_da
    x_a_alt = e1 * e2 * (lam_ratio + net * x_da**e1) / denom_alt
    if abs(x_a_alt - x_a) > 1e-8 * abs(x_a):
        raise ConsistencyError(
            f"free boundary mismatch: {x_a} vs {x_a_alt} (rel "
            f"{abs(x_a_alt - x_a) / abs(x_a):.3e})"
        )

    x_d = x_a * x_da

    c1 = ((1.0 - e2) * g_a * x_a - e2 * net) / (e1 - e2)
    c2a = (-(1.0 - e1) * g_a * x_a + e1 * net) / (e1 - e2)
    c2d = -(e1 / (e1 - e2)) * lam_ratio
    c1d = c1 * x_da**e1
    c_in = g_d * x_d / e1

    # C1 fit at x_d: the x_a-side coefficients must reproduce both the value
    # and the slope of the inner piece there.  Compared at the scale of the
    # dual itself; coefficient-relative comparison would be meaningless when
    # l (and with it c2d) is tiny.
    dual_scale = max(abs(c1d), abs(c_in), lam_ratio, abs(net), 1.0)
    cont_gap = abs((c1d + c2d + lam_ratio) - c_in)
    if cont_gap > _C1_FIT_TOL * dual_scale:
        raise ConsistencyError(
            f"dual value mismatch at x_d: gap {cont_gap:.3e} vs scale {dual_scale:.3e}"
        )
    slope_gap = abs((e1 * c1d + e2 * c2d) / x_d + pivot - pov.d)
    if slope_gap > _C1_FIT_TOL * max(1.0, abs(pov.d)):
        raise ConsistencyError(
            f"dual slope mismatch at x_d: {slope_gap:.3e} from d={pov.d}"
        )

    return PowerDual(
        problem=problem,
        e1=e1,
        e2=e2,
        pivot=pivot,
        x_da=x_da,
        x_a=x_a,
        x_d=x_d,
        lam_ratio=lam_ratio,
        net=net,
        c_in=c_in,
        c1=c1,
        c2a=c2a,
        c1d=c1d,
        c2d=c2d,
    )
