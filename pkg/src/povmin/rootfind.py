"""Shared scalar numerics: bracketed root finding and overflow-safe powers."""

from __future__ import annotations

import math
from collections.abc import Callable

from .errors import BracketError


def powmul(coef: float, base: float, expo: float) -> float:
    """coef * base**expo computed through exp/log.

    Avoids intermediate overflow when coef is tiny and base**expo huge (or
    vice versa), which happens for dual coefficients when the ODE exponents
    are large.  base must be positive unless coef == 0.
    """
    if coef == 0.0:
        return 0.0
    if base <= 0.0:
        if base == 0.0:
            return 0.0 if expo > 0.0 else math.inf * math.copysign(1.0, coef)
        raise ValueError(f"powmul needs a positive base, got {base}")
    t = math.log(abs(coef)) + expo * math.log(base)
    if t > 700.0:
        return math.copysign(math.inf, coef)
    return math.copysign(math.exp(t), coef)


def bisect_root(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    *,
    xtol: float = 1e-14,
    fprime: Callable[[float], float] | None = None,
    max_iter: int = 200,
) -> float:
    """Root of f on [lo, hi] by bisection, optionally polished by Newton.

    f(lo) and f(hi) must have opposite signs (else :class:`BracketError`).
    Bisection runs until the bracket width is at most xtol, which is
    guaranteed; if a derivative is supplied, safeguarded Newton steps then
    polish the root without ever leaving the final bracket.
    """
    flo = f(lo)
    fhi = f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if (flo > 0.0) == (fhi > 0.0):
        raise BracketError(
            f"no sign change on [{lo}, {hi}]: f(lo)={flo:.3e}, f(hi)={fhi:.3e}"
        )

    for _ in range(max_iter):
        if hi - lo <= xtol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fmid = f(mid)
        if fmid == 0.0:
            return mid
        if (fmid > 0.0) == (flo > 0.0):
            lo, flo = mid, fmid
        else:
            hi, fhi = mid, fmid

    x = 0.5 * (lo + hi)
    if fprime is not None:
        for _ in range(3):
            fx = f(x)
            dfx = fprime(x)
            if dfx == 0.0 or not math.isfinite(dfx):
                break
            step = fx / dfx
            x_new = x - step
            if not (lo <= x_new <= hi):
                break
            if x_new == x:
                break
            x = x_new
    return x
