"""Model parameters, derived constants, and feasibility validation.

Everything downstream (closed-form solvers, the finite-difference solver,
the Monte Carlo engine) consumes a :class:`ValidatedProblem`, which is an
immutable bundle of market parameters, a consumption rule, a poverty
function, and the exponents derived from them.  All rates are per year;
wealth and penalties are plain floats with no currency semantics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from .errors import FeasibilityError

# Running poverty costs below this are rejected: the problem degenerates to
# pure ruin-probability minimization, which has its own dedicated flag.
MIN_POVERTY_COST = 1e-12


@dataclass(frozen=True)
class MarketParams:
    """Black-Scholes market with one riskless and one risky asset.

    r: riskless rate (>0), mu: risky drift (must exceed r), sigma: risky
    volatility (>0), lam: mortality hazard rate (>0), A: income rate (>=0).
    """

    r: float
    mu: float
    sigma: float
    lam: float
    A: float = 0.0

    @property
    def m(self) -> float:
        """Half the squared Sharpe ratio, the diffusion constant of the dual ODEs."""
        return 0.5 * ((self.mu - self.r) / self.sigma) ** 2


@dataclass(frozen=True)
class DerivedConstants:
    """Exponent pairs of the dual ODEs.

    (beta1, beta2) solve  m*x^2 - (r - lam + m)*x - lam = 0  and drive the
    constant-consumption solution; (gamma1, gamma2) solve
    m*x^2 - (r - kappa - lam + m)*x - lam = 0 and are only populated in the
    proportional regime.
    """

    m: float
    beta1: float
    beta2: float
    gamma1: float | None = None
    gamma2: float | None = None


@dataclass(frozen=True)
class ConstantConsumption:
    """c(w) = c, a constant spending rate."""

    c: float

    kind = "constant"

    def rate(self, w: float) -> float:
        return self.c

    # Net consumption written as c0 + c1*w so both regimes share one form.
    def linear_coeffs(self) -> tuple[float, float]:
        return self.c, 0.0


@dataclass(frozen=True)
class ProportionalConsumption:
    """c(w) = kappa * w, spending proportional to wealth."""

    kappa: float

    kind = "proportional"

    def rate(self, w: float) -> float:
        return self.kappa * w

    def linear_coeffs(self) -> tuple[float, float]:
        return 0.0, self.kappa


@dataclass(frozen=True)
class PovertySpec:
    """Single-step poverty function with a ruin penalty.

    The running cost is l on [a, d] and 0 above d; reaching the ruin level a
    costs rho.  With ``ruin_probability_mode`` the running cost is dropped
    entirely and the problem becomes rho times the minimum probability of
    lifetime ruin.
    """

    a: float
    d: float
    l: float
    rho: float
    ruin_probability_mode: bool = False

    def level(self, w: float) -> float:
        if self.ruin_probability_mode:
            return 0.0
        return self.l if self.a <= w <= self.d else 0.0

    def level_at_ruin(self) -> float:
        return 0.0 if self.ruin_probability_mode else self.l

    def max_level(self) -> float:
        return self.level_at_ruin()

    def breakpoints(self) -> tuple[float, ...]:
        return () if self.ruin_probability_mode else (self.d,)

    @property
    def is_single_step(self) -> bool:
        return True


@dataclass(frozen=True)
class StaircasePoverty:
    """Non-increasing staircase poverty function.

    l(w) = base + sum of b_i over steps with w <= d_i, for w >= a.  Steps
    must be ordered by level d_i with strictly positive increments b_i, so
    the function is automatically non-negative and non-increasing.  Routed
    to the finite-difference solver; no closed form.
    """

    a: float
    rho: float
    base: float
    steps: tuple[tuple[float, float], ...]

    def level(self, w: float) -> float:
        if w < self.a:
            return self.level_at_ruin()
        out = self.base
        for d_i, b_i in self.steps:
            if w <= d_i:
                out += b_i
        return out

    def level_at_ruin(self) -> float:
        return self.base + sum(b for _, b in self.steps)

    def max_level(self) -> float:
        return self.level_at_ruin()

    def breakpoints(self) -> tuple[float, ...]:
        return tuple(d for d, _ in self.steps)

    @property
    def is_single_step(self) -> bool:
        return False

    ruin_probability_mode = False


Consumption = ConstantConsumption | ProportionalConsumption
Poverty = PovertySpec | StaircasePoverty


@dataclass(frozen=True)
class ProblemSpec:
    """Unvalidated problem: market + consumption + poverty."""

    market: MarketParams
    consumption: Consumption
    poverty: Poverty


@dataclass(frozen=True)
class ValidatedProblem:
    """A ProblemSpec that passed :func:`validate`, with derived constants attached."""

    market: MarketParams
    consumption: Consumption
    poverty: Poverty
    derived: DerivedConstants
    w_s: float

    @property
    def is_constant(self) -> bool:
        return isinstance(self.consumption, ConstantConsumption)

    @property
    def wbar(self) -> float:
        """Safe level (c - A)/r for the constant regime."""
        if not self.is_constant:
            raise AttributeError("wbar is defined only for constant consumption")
        return (self.consumption.c - self.market.A) / self.market.r

    @property
    def abar(self) -> float:
        """Annuity floor A/(kappa - r) for the proportional regime."""
        if self.is_constant:
            raise AttributeError("abar is defined only for proportional consumption")
        return self.market.A / (self.consumption.kappa - self.market.r)

    def spec(self) -> ProblemSpec:
        return ProblemSpec(self.market, self.consumption, self.poverty)


def _stable_quadratic_roots(m: float, b: float, lam: float) -> tuple[float, float]:
    """Roots of m*x^2 - b*x - lam = 0, (positive, negative).

    The larger-magnitude root comes straight from the formula (no
    cancellation because the discriminant dominates); the companion root
    uses the product identity x1*x2 = -lam/m, which is exact for the
    small-magnitude root even when lam*m is tiny.
    """
    disc = math.sqrt(b * b + 4.0 * lam * m)
    if b >= 0.0:
        pos = (b + disc) / (2.0 * m)
        neg = -lam / (m * pos)
    else:
        neg = (b - disc) / (2.0 * m)
        pos = -lam / (m * neg)
    return pos, neg


def exponents(market: MarketParams, consumption: Consumption) -> DerivedConstants:
    """Derived constants (m, beta1, beta2) and, when proportional, (gamma1, gamma2)."""
    m = market.m
    beta1, beta2 = _stable_quadratic_roots(m, market.r - market.lam + m, market.lam)
    gamma1 = gamma2 = None
    if isinstance(consumption, ProportionalConsumption):
        gamma1, gamma2 = _stable_quadratic_roots(
            m, market.r - consumption.kappa - market.lam + m, market.lam
        )
    return DerivedConstants(m=m, beta1=beta1, beta2=beta2, gamma1=gamma1, gamma2=gamma2)


def safe_level(spec: ProblemSpec | ValidatedProblem) -> float:
    """Wealth above which zero risky investment keeps wealth non-decreasing.

    (c - A)/r for constant consumption; +inf for proportional consumption
    with kappa > r.
    """
    if isinstance(spec.consumption, ConstantConsumption):
        return (spec.consumption.c - spec.market.A) / spec.market.r
    return math.inf


def check(spec: ProblemSpec) -> list[str]:
    """Return the complete list of violated feasibility constraints (empty if valid)."""
    violations: list[str] = []
    mkt, cons, pov = spec.market, spec.consumption, spec.poverty

    if not (mkt.r > 0.0):
        violations.append(f"riskless rate must be positive (r={mkt.r})")
    if not (mkt.sigma > 0.0):
        violations.append(f"volatility must be positive (sigma={mkt.sigma})")
    if not (mkt.mu > mkt.r):
        violations.append(
            f"risk premium must be positive (mu={mkt.mu} <= r={mkt.r})"
        )
    if not (mkt.lam > 0.0):
        violations.append(f"hazard rate must be positive (lambda={mkt.lam})")
    if not (mkt.A >= 0.0):
        violations.append(f"income rate must be non-negative (A={mkt.A})")

    if not (pov.rho > 0.0):
        violations.append(f"ruin penalty must be positive (rho={pov.rho})")

    ruin_mode = getattr(pov, "ruin_probability_mode", False)
    if isinstance(pov, PovertySpec):
        if not (pov.d > pov.a):
            violations.append(
                f"poverty level must exceed ruin level (d={pov.d} <= a={pov.a})"
            )
        if not ruin_mode:
            if pov.l < MIN_POVERTY_COST:
                violations.append(
                    f"running poverty cost must be positive (l={pov.l}); "
                    "use ruin_probability_mode for the l=0 problem"
                )
    else:
        if pov.base < 0.0:
            violations.append(f"staircase base must be non-negative (base={pov.base})")
        if not pov.steps:
            violations.append("staircase poverty needs at least one step")
        prev_d = pov.a
        for d_i, b_i in pov.steps:
            if not (d_i > prev_d):
                violations.append(
                    f"staircase levels must be increasing and above a (d_i={d_i})"
                )
            if not (b_i > 0.0):
                violations.append(f"staircase increments must be positive (b_i={b_i})")
            prev_d = d_i
        if pov.level_at_ruin() < MIN_POVERTY_COST:
            violations.append("staircase poverty function is identically zero")

    # No financial suicide: ruin must never beat staying poor forever.
    if mkt.lam > 0.0 and not ruin_mode:
        l_at_a = pov.level_at_ruin()
        if pov.rho * mkt.lam < l_at_a * (1.0 - 1e-12):
            violations.append(
                "financial suicide: rho must be at least l(a+)/lambda "
                f"(rho={pov.rho} < {l_at_a / mkt.lam})"
            )

    if isinstance(cons, ConstantConsumption):
        if not (cons.c > mkt.A):
            violations.append(
                f"constant consumption must exceed income (c={cons.c} <= A={mkt.A})"
            )
        elif mkt.r > 0.0:
            ws = (cons.c - mkt.A) / mkt.r
            top = max(pov.breakpoints(), default=None)
            if top is not None and not (top < ws):
                violations.append(
                    f"poverty level above safe level (d={top} >= w_s={ws})"
                )
            if not (pov.a < ws):
                violations.append(f"ruin level above safe level (a={pov.a} >= w_s={ws})")
    else:
        if not (cons.kappa > mkt.r):
            violations.append(
                f"proportional rate must exceed r (kappa={cons.kappa} <= r={mkt.r})"
            )
        else:
            floor = mkt.A / (cons.kappa - mkt.r)
            if not (pov.a > floor):
                violations.append(
                    f"ruin level must exceed A/(kappa-r) (a={pov.a} <= {floor})"
                )
        if isinstance(pov, StaircasePoverty) and pov.base > 0.0:
            violations.append(
                "staircase base must vanish for proportional consumption "
                "(poverty cost must die out at large wealth)"
            )

    return violations


def validate(spec: ProblemSpec) -> ValidatedProblem:
    """Gate every solver: return the spec with derived constants, or raise.

    Raises :class:`FeasibilityError` carrying the complete list of violated
    constraints rather than failing on the first one.
    """
    violations = check(spec)
    if violations:
        raise FeasibilityError(violations)
    derived = exponents(spec.market, spec.consumption)
    return ValidatedProblem(
        market=spec.market,
        consumption=spec.consumption,
        poverty=spec.poverty,
        derived=derived,
        w_s=safe_level(spec),
    )


# ---------------------------------------------------------------------------
# JSON serialization (field names are part of the CLI contract)
# ---------------------------------------------------------------------------

def spec_to_dict(spec: ProblemSpec | ValidatedProblem) -> dict:
    mkt = spec.market
    out: dict = {
        "market": {
            "r": mkt.r,
            "mu": mkt.mu,
            "sigma": mkt.sigma,
            "lambda": mkt.lam,
            "A": mkt.A,
        }
    }
    cons = spec.consumption
    if isinstance(cons, ConstantConsumption):
        out["consumption"] = {"type": "constant", "c": cons.c}
    else:
        out["consumption"] = {"type": "proportional", "kappa": cons.kappa}
    pov = spec.poverty
    if isinstance(pov, PovertySpec):
        pd = {"a": pov.a, "d": pov.d, "l": pov.l, "rho": pov.rho}
        if pov.ruin_probability_mode:
            pd["ruin_probability_mode"] = True
        out["poverty"] = pd
    else:
        out["poverty"] = {
            "type": "staircase",
            "a": pov.a,
            "rho": pov.rho,
            "base": pov.base,
            "steps": [{"d": d, "b": b} for d, b in pov.steps],
        }
    return out


def spec_from_dict(data: dict) -> ProblemSpec:
    try:
        m = data["market"]
        market = MarketParams(
            r=float(m["r"]),
            mu=float(m["mu"]),
            sigma=float(m["sigma"]),
            lam=float(m["lambda"]),
            A=float(m.get("A", 0.0)),
        )
        c = data["consumption"]
        if c["type"] == "constant":
            consumption: Consumption = ConstantConsumption(c=float(c["c"]))
        elif c["type"] == "proportional":
            consumption = ProportionalConsumption(kappa=float(c["kappa"]))
        else:
            raise ValueError(f"unknown consumption type {c['type']!r}")
        p = data["poverty"]
        if p.get("type", "single") == "staircase":
            poverty: Poverty = StaircasePoverty(
                a=float(p["a"]),
                rho=float(p["rho"]),
                base=float(p.get("base", 0.0)),
                steps=tuple(
                    (float(s["d"]), float(s["b"])) for s in p.get("steps", [])
                ),
            )
        else:
            poverty = PovertySpec(
                a=float(p["a"]),
                d=float(p["d"]),
                l=float(p["l"]),
                rho=float(p["rho"]),
                ruin_probability_mode=bool(p.get("ruin_probability_mode", False)),
            )
    except KeyError as exc:
        raise ValueError(f"spec document missing required field {exc}") from exc
    return ProblemSpec(market=market, consumption=consumption, poverty=poverty)


def load_spec(path: str) -> ProblemSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))
