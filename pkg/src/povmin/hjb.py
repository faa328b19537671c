"""Finite-difference solver for the value-function boundary-value problem.

Handles arbitrary staircase poverty functions and both consumption regimes
on a wealth grid, via policy iteration (Howard's algorithm): given a
policy, the linear operator is discretized with three-point stencils and
solved as a sparse system; the policy is then re-extracted from the
discrete derivatives.  First-derivative stencils are centered wherever the
resulting row keeps the positive-coefficient (M-matrix) property and fall
back to one-sided upwind differences where the drift dominates the
diffusion, which happens only near the safe level where the optimal
exposure vanishes.

Poverty-function discontinuities get dedicated interface rows: the value
is C1 across each step of the staircase with one-sided second derivatives,
so the PDE row at a step node is replaced by a second-order matching of
the one-sided slopes, and the running cost takes its left value on the
left cell and its right value on the right cell.

Serves as the independent numerical oracle for both closed-form modules
and as the only solver for multi-step staircase functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvexityLoss, FeasibilityError, NonConvergence, OrderingViolation
from .model import ProblemSpec, ValidatedProblem, validate

PI_MIN = 1e-8
DEFAULT_NODES = 1001
DEFAULT_WMAX_MULTIPLE = 1e3  # proportional regime: W_max = multiple * top step


@dataclass(frozen=True)
class GridConfig:
    n: int = DEFAULT_NODES
    w_max: float | None = None  # proportional regime only; default 1e3 * max(d_i)


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 200
    tol: float | None = None  # sup-change tolerance; default 1e-12 * rho


@dataclass(frozen=True)
class WealthGrid:
    """Strictly increasing wealth nodes from a to W_max.

    Every poverty-function discontinuity strictly inside the domain is a
    node; kink_idx holds their indices.
    """

    nodes: np.ndarray
    kink_idx: tuple[int, ...]

    @property
    def n(self) -> int:
        return self.nodes.size

    @staticmethod
    def build(problem: ValidatedProblem, config: GridConfig | None = None) -> "WealthGrid":
        config = config or GridConfig()
        n = max(int(config.n), 201)
        a = problem.poverty.a
        breaks = sorted(problem.poverty.breakpoints())

        if problem.is_constant:
            w_max = problem.w_s
            breaks = [d for d in breaks if a < d < w_max]
            edges = [a] + breaks + [w_max]
            lengths = np.diff(edges)
            counts = _allocate(n - 1, lengths / lengths.sum())
            pieces = [
                np.linspace(lo, hi, c + 1)
                for lo, hi, c in zip(edges[:-1], edges[1:], counts)
            ]
        else:
            # ruin-probability mode has no poverty step; d still anchors the
            # near-field segment and the start of the geometric tail
            top = max(breaks) if breaks else float(problem.poverty.d)
            w_max = config.w_max if config.w_max is not None else DEFAULT_WMAX_MULTIPLE * top
            if w_max <= top:
                raise FeasibilityError(["w_max must exceed the top poverty level"])
            edges = [a] + (breaks if breaks else [top])
            lengths = np.diff(edges)
            n_low = max(int(round(0.5 * (n - 1))), 6 * len(lengths))
            counts = _allocate(n_low, lengths / lengths.sum())
            pieces = [
                np.linspace(lo, hi, c + 1)
                for lo, hi, c in zip(edges[:-1], edges[1:], counts)
            ]
            # tail with geometrically growing cells, starting from the spacing
            # just left of the top step so the kink stencils stay balanced;
            # asymptotically this is log spacing, which resolves the
            # polynomial decay uniformly in relative terms
            n_tail = (n - 1) - n_low
            h0 = pieces[-1][-1] - pieces[-1][-2]
            pieces.append(_geometric_tail(top, w_max, h0, n_tail))

        nodes = np.concatenate([p if i == 0 else p[1:] for i, p in enumerate(pieces)])
        kink_idx = tuple(int(np.argmin(np.abs(nodes - d))) for d in breaks)
        for j, d in zip(kink_idx, breaks):
            nodes[j] = d  # breakpoints are nodes exactly
            if j < 2 or j > nodes.size - 3:
                raise FeasibilityError(
                    ["grid too coarse: a poverty step sits within two nodes of a boundary"]
                )
        if not (np.diff(nodes) > 0).all():
            raise FeasibilityError(["grid nodes are not strictly increasing"])
        return WealthGrid(nodes=nodes, kink_idx=kink_idx)


def _allocate(total: int, weights: np.ndarray) -> list[int]:
    """Split `total` cells across segments proportionally, at least 6 each."""
    counts = np.maximum(np.round(weights * total).astype(int), 6)
    counts[int(np.argmax(counts))] += total - int(counts.sum())
    if counts.min() < 6:
        raise FeasibilityError(["grid too coarse for the requested segments"])
    return [int(c) for c in counts]


def _geometric_tail(lo: float, hi: float, h0: float, n_cells: int) -> np.ndarray:
    """Nodes from lo to hi whose cell widths grow geometrically from h0."""
    span = hi - lo
    if h0 * n_cells >= span:
        return np.linspace(lo, hi, n_cells + 1)

    def total(q):
        return h0 * (q**n_cells - 1.0) / (q - 1.0) - span

    q_lo, q_hi = 1.0 + 1e-12, 2.0
    while total(q_hi) < 0.0:
        q_hi *= 2.0
    for _ in range(200):
        q = 0.5 * (q_lo + q_hi)
        if total(q) > 0.0:
            q_hi = q
        else:
            q_lo = q
    q = 0.5 * (q_lo + q_hi)
    nodes = lo + np.concatenate([[0.0], np.cumsum(h0 * q ** np.arange(n_cells))])
    nodes[-1] = hi
    return nodes


@dataclass
class ValueTable:
    """Grid solution: values, extracted policy, and scheme residuals."""

    problem: ValidatedProblem
    grid: WealthGrid
    values: np.ndarray
    policy: np.ndarray
    residuals: np.ndarray
    iterations: int
    sup_change: float
    upwind_mask: np.ndarray
    policy_gap: float

    def value_at(self, w):
        return np.interp(w, self.grid.nodes, self.values)

    def policy_at(self, w):
        return np.interp(w, self.grid.nodes, self.policy)


def _drift_coeffs(problem: ValidatedProblem, w: np.ndarray, pi: np.ndarray):
    """(b, D): wealth drift under policy pi and the diffusion coefficient."""
    mkt = problem.market
    c0, c1 = problem.consumption.linear_coeffs()
    b = mkt.r * w + (mkt.mu - mkt.r) * pi - (c0 + c1 * w) + mkt.A
    big_d = 0.5 * mkt.sigma**2 * pi**2
    return b, big_d


def _centered_first(h_minus, h_plus):
    lo = -h_plus / (h_minus * (h_minus + h_plus))
    hi = h_minus / (h_plus * (h_minus + h_plus))
    return lo, -(lo + hi), hi


def _centered_second(h_minus, h_plus):
    lo = 2.0 / (h_minus * (h_minus + h_plus))
    hi = 2.0 / (h_plus * (h_minus + h_plus))
    return lo, -(lo + hi), hi


def _sided_first(h1, h2, side):
    """3-point one-sided slope at the edge point.

    side=+1 uses (x, x+h1, x+h1+h2); side=-1 uses (x, x-h1, x-h1-h2).
    Returns coefficients for (f_at, f_near, f_far); uniform backward case
    is (3, -4, 1)/(2h).
    """
    c_at = (2.0 * h1 + h2) / (h1 * (h1 + h2))
    c_near = -(h1 + h2) / (h1 * h2)
    c_far = h1 / (h2 * (h1 + h2))
    return -side * c_at, -side * c_near, -side * c_far


def _sided_second(h1, h2):
    c_at = 2.0 / (h1 * (h1 + h2))
    c_near = -2.0 / (h1 * h2)
    c_far = 2.0 / (h2 * (h1 + h2))
    return c_at, c_near, c_far


def initial_policy(problem: ValidatedProblem, w: np.ndarray) -> np.ndarray:
    """The ruin-probability-minimizing policy, the warm start everywhere."""
    mkt = problem.market
    k = (mkt.mu - mkt.r) / mkt.sigma**2
    if problem.is_constant:
        return k * (problem.derived.beta1 - 1.0) * (problem.wbar - w)
    return k * (1.0 - problem.derived.gamma1) * (w - problem.abar)


def _pi_caps(problem: ValidatedProblem, w: np.ndarray) -> np.ndarray:
    # The optimal policy can exceed the ruin-probability policy by a factor
    # up to (1 - e2) with e2 the negative dual exponent (it reaches that
    # scale when the running poverty cost saturates the suicide constraint),
    # so the clip must scale with it or it would bind the true solution.
    der = problem.derived
    e2 = der.beta2 if problem.is_constant else der.gamma2
    amplification = max(1.0, 1.0 - e2)
    pi0 = initial_policy(problem, w)
    pi0_a = initial_policy(problem, np.array([problem.poverty.a]))[0]
    return 10.0 * amplification * np.maximum(pi0_a, np.abs(pi0))


def _poverty_on_nodes(problem: ValidatedProblem, nodes: np.ndarray) -> np.ndarray:
    return np.array([problem.poverty.level(w) for w in nodes])


def _robin_theta(problem: ValidatedProblem, w_last: float, w_prev: float) -> float:
    g1 = problem.derived.gamma1
    abar = problem.abar
    return ((w_last - abar) / (w_prev - abar)) ** (-g1 / (1.0 - g1))


def _assemble_system(problem, grid, pi, lvals, upwind_override=None):
    """Sparse system for one policy-evaluation step; returns (A, rhs, upwind).

    upwind_override freezes the stencil-selection pattern: policy iteration
    can otherwise chatter when the hybrid switch set flips with the policy
    near the safe level.
    """
    w = grid.nodes
    n = w.size
    lam = problem.market.lam
    kinks = set(grid.kink_idx)

    b, big_d = _drift_coeffs(problem, w, pi)
    h = np.diff(w)
    hm, hp = h[:-1], h[1:]  # spacings around interior node i: hm[i-1], hp[i-1]

    i_all = np.arange(1, n - 1)
    d1_lo, d1_c, d1_hi = _centered_first(hm, hp)
    d2_lo, d2_c, d2_hi = _centered_second(hm, hp)
    bi, di = b[1:-1], big_d[1:-1]

    lo = bi * d1_lo + di * d2_lo
    ce = bi * d1_c + di * d2_c - lam
    hi = bi * d1_hi + di * d2_hi

    # hybrid upwinding: where a centered row loses the sign pattern, shift
    # the drift term to the one-sided difference in the flow direction
    if upwind_override is not None:
        bad = upwind_override[1:-1]
    else:
        bad = (lo < 0.0) | (hi < 0.0)
    upwind = np.zeros(n, dtype=bool)
    if bad.any():
        idx = np.nonzero(bad)[0]
        upwind[idx + 1] = True
        fwd = bi[idx] >= 0.0
        lo[idx] = di[idx] * d2_lo[idx] + np.where(fwd, 0.0, -bi[idx] / hm[idx])
        ce[idx] = (
            di[idx] * d2_c[idx]
            - lam
            + np.where(fwd, -bi[idx] / hp[idx], bi[idx] / hm[idx])
        )
        hi[idx] = di[idx] * d2_hi[idx] + np.where(fwd, bi[idx] / hp[idx], 0.0)

    rows, cols, vals = [], [], []
    rhs = np.zeros(n)

    keep = np.array([i not in kinks for i in i_all])
    ii = i_all[keep]
    rows.extend([ii, ii, ii])
    cols.extend([ii - 1, ii, ii + 1])
    vals.extend([lo[keep], ce[keep], hi[keep]])
    rhs[ii] = -lvals[ii]

    # C1 interface rows at poverty steps: one-sided slopes must match
    for j in grid.kink_idx:
        h1l, h2l = w[j] - w[j - 1], w[j - 1] - w[j - 2]
        h1r, h2r = w[j + 1] - w[j], w[j + 2] - w[j + 1]
        cl = _sided_first(h1l, h2l, side=-1)
        cr = _sided_first(h1r, h2r, side=+1)
        rows.append(np.array([j] * 5))
        cols.append(np.array([j - 2, j - 1, j, j + 1, j + 2]))
        vals.append(np.array([cl[2], cl[1], cl[0] - cr[0], -cr[1], -cr[2]]))
        rhs[j] = 0.0

    rows.append(np.array([0]))
    cols.append(np.array([0]))
    vals.append(np.array([1.0]))
    rhs[0] = problem.poverty.rho
    if problem.is_constant:
        rows.append(np.array([n - 1]))
        cols.append(np.array([n - 1]))
        vals.append(np.array([1.0]))
        rhs[n - 1] = 0.0
    else:
        theta = _robin_theta(problem, w[-1], w[-2])
        rows.append(np.array([n - 1, n - 1]))
        cols.append(np.array([n - 2, n - 1]))
        vals.append(np.array([-theta, 1.0]))
        rhs[n - 1] = 0.0

    A = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return A, rhs, upwind


def _solve_linear(problem, A, rhs):
    """Solve with Dirichlet unknowns eliminated, so boundary values are exact."""
    n = rhs.size
    fixed = np.zeros(n, dtype=bool)
    fixed[0] = True
    if problem.is_constant:
        fixed[-1] = True
    free = ~fixed
    x = np.zeros(n)
    x[fixed] = rhs[fixed]  # Dirichlet rows are identity rows
    a_csr = A.tocsr()
    reduced = a_csr[free][:, free]
    coupling = a_csr[free][:, fixed] @ x[fixed]
    x[free] = spla.spsolve(reduced.tocsc(), rhs[free] - coupling)
    return x


def discrete_derivatives(grid: WealthGrid, values: np.ndarray):
    """(V_w, V_ww) at every node: centered inside, one-sided at kinks and ends.

    At a poverty step the right-sided stencils are used, matching the
    simulation convention for the policy there.
    """
    w = grid.nodes
    n = w.size
    v = values
    d1 = np.empty(n)
    d2 = np.empty(n)

    hm, hp = np.diff(w)[:-1], np.diff(w)[1:]
    a1, b1, c1 = _centered_first(hm, hp)
    a2, b2, c2 = _centered_second(hm, hp)
    d1[1:-1] = a1 * v[:-2] + b1 * v[1:-1] + c1 * v[2:]
    d2[1:-1] = a2 * v[:-2] + b2 * v[1:-1] + c2 * v[2:]

    def sided(j, direction):
        if direction > 0:
            h1, h2 = w[j + 1] - w[j], w[j + 2] - w[j + 1]
            p0, p1, p2 = v[j], v[j + 1], v[j + 2]
        else:
            h1, h2 = w[j] - w[j - 1], w[j - 1] - w[j - 2]
            p0, p1, p2 = v[j], v[j - 1], v[j - 2]
        f0, f1, f2 = _sided_first(h1, h2, side=direction)
        s0, s1, s2 = _sided_second(h1, h2)
        return f0 * p0 + f1 * p1 + f2 * p2, s0 * p0 + s1 * p1 + s2 * p2

    d1[0], d2[0] = sided(0, +1)
    d1[-1], d2[-1] = sided(n - 1, -1)
    for j in grid.kink_idx:
        d1[j], d2[j] = sided(j, +1)
    return d1, d2


def extract_policy(
    problem: ValidatedProblem,
    grid: WealthGrid,
    values: np.ndarray,
) -> np.ndarray:
    """Feedback policy -k*V_w/V_ww from discrete derivatives, clipped.

    The clip range [PI_MIN, 10*max(pi0(a), pi0(w))] guards the division
    near vanishing curvature.
    """
    mkt = problem.market
    k = (mkt.mu - mkt.r) / mkt.sigma**2
    caps = _pi_caps(problem, grid.nodes)
    d1, d2 = discrete_derivatives(grid, values)
    with np.errstate(divide="ignore", invalid="ignore"):
        pi = -k * d1 / d2
    # Non-convex nodes: the Hamiltonian is concave in pi there, so the
    # minimizer over the capped control set sits at a bound (Howard step on
    # the truncated controls); freezing instead can lock a spurious fixed
    # point near the poverty step.
    bad = ~np.isfinite(pi) | (d2 <= 0.0)
    if bad.any():
        mu_ex = mkt.mu - mkt.r
        q_lo = mu_ex * d1[bad] * PI_MIN + 0.5 * mkt.sigma**2 * d2[bad] * PI_MIN**2
        q_hi = (
            mu_ex * d1[bad] * caps[bad] + 0.5 * mkt.sigma**2 * d2[bad] * caps[bad] ** 2
        )
        pi[bad] = np.where(q_hi <= q_lo, caps[bad], PI_MIN)
    return np.clip(pi, PI_MIN, caps)


def solve_bvp(
    problem: ProblemSpec | ValidatedProblem,
    grid: WealthGrid | GridConfig | None = None,
    solver: SolverConfig | None = None,
) -> ValueTable:
    """Policy iteration to the discrete fixed point.

    Raises NonConvergence past the iteration cap and ConvexityLoss if the
    converged solution has a non-convex interior node.
    """
    if not isinstance(problem, ValidatedProblem):
        problem = validate(problem)
    wgrid = grid if isinstance(grid, WealthGrid) else WealthGrid.build(problem, grid)
    solver = solver or SolverConfig()
    tol = solver.tol if solver.tol is not None else 1e-12 * problem.poverty.rho

    nodes = wgrid.nodes
    lvals = _poverty_on_nodes(problem, nodes)
    pi = np.clip(initial_policy(problem, nodes), PI_MIN, _pi_caps(problem, nodes))

    values = None
    sup_change = math.inf
    prev_change = math.inf
    frozen_upwind = None
    for it in range(1, solver.max_iters + 1):
        A, rhs, used_upwind = _assemble_system(
            problem, wgrid, pi, lvals, upwind_override=frozen_upwind
        )
        new_values = _solve_linear(problem, A, rhs)
        if values is not None:
            sup_change = float(np.max(np.abs(new_values - values)))
        values = new_values
        pi = extract_policy(problem, wgrid, values)
        if sup_change <= tol:
            break
        # stagnation at the factorization noise floor: on fine grids the
        # requested tolerance can sit below what repeated sparse solves
        # reproduce; stop once the change is tiny and no longer contracting
        if sup_change <= 1e-9 * problem.poverty.rho and sup_change > 0.5 * prev_change:
            break
        # The hybrid stencil switch set moves with the policy and can lock
        # the iteration into a tiny limit cycle near the safe level; once
        # the value change is small and no longer contracting, freeze the
        # pattern so Howard iteration contracts on a fixed discretization.
        if (
            frozen_upwind is None
            and sup_change <= 1e-5 * problem.poverty.rho
            and sup_change > 0.5 * prev_change
        ):
            frozen_upwind = used_upwind.copy()
        prev_change = sup_change
    else:
        raise NonConvergence(solver.max_iters, sup_change)

    # scheme residual at the fixed point, with the converged policy
    A, rhs, upwind = _assemble_system(
        problem, wgrid, pi, lvals, upwind_override=frozen_upwind
    )
    residuals = A @ values - rhs
    for j in (0, nodes.size - 1, *wgrid.kink_idx):
        residuals[j] = 0.0

    _, d2 = discrete_derivatives(wgrid, values)
    interior = np.ones(nodes.size, dtype=bool)
    interior[[0, -1]] = False
    cvx_tol = 1e-7 * max(1.0, float(np.max(np.abs(d2))))
    if (d2[interior] < -cvx_tol).any():
        worst = int(np.argmin(d2[interior]))
        raise ConvexityLoss(
            f"discrete V_ww = {d2[interior][worst]:.3e} at w = {nodes[interior][worst]}"
        )

    gap = float(np.max(np.abs(pi - extract_policy(problem, wgrid, values))))
    return ValueTable(
        problem=problem,
        grid=wgrid,
        values=values,
        policy=pi,
        residuals=residuals,
        iterations=it,
        sup_change=sup_change,
        upwind_mask=upwind,
        policy_gap=gap,
    )


@dataclass(frozen=True)
class ResidualReport:
    max_abs: float
    mean_abs: float
    n_included: int
    n_excluded: int


def residual(table: ValueTable) -> ResidualReport:
    """Scheme residual over interior nodes, excluding one-sided-stencil nodes."""
    n = table.grid.n
    mask = np.ones(n, dtype=bool)
    mask[[0, n - 1]] = False
    mask[list(table.grid.kink_idx)] = False
    mask &= ~table.upwind_mask
    r = np.abs(table.residuals[mask])
    return ResidualReport(
        max_abs=float(r.max()),
        mean_abs=float(r.mean()),
        n_included=int(mask.sum()),
        n_excluded=int(n - mask.sum()),
    )


def nonlinear_residual(
    problem: ValidatedProblem, grid: WealthGrid, values: np.ndarray
) -> np.ndarray:
    """Optimized-policy discrete operator evaluated with centered stencils.

    Independent of the solve path: injection and grid-refinement studies
    feed arbitrary values (e.g. the closed form sampled on the nodes) and
    read off the truncation behavior.  Boundary and step nodes are zeroed;
    the PDE does not hold there.
    """
    mkt = problem.market
    lam, m = mkt.lam, problem.derived.m
    c0, c1 = problem.consumption.linear_coeffs()
    w = grid.nodes
    d1, d2 = discrete_derivatives(grid, values)
    lvals = _poverty_on_nodes(problem, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (
            lam * values
            - (mkt.r * w - (c0 + c1 * w) + mkt.A) * d1
            + m * d1 * d1 / d2
            - lvals
        )
    out[~np.isfinite(out)] = 0.0
    out[[0, -1]] = 0.0
    for j in grid.kink_idx:
        out[j] = 0.0
    return out


def comparison_check(
    table_lo: ValueTable, table_hi: ValueTable, tol: float | None = None
) -> float:
    """Assert node-wise ordering values(table_lo) <= values(table_hi).

    Returns the worst (most positive) gap lo - hi; raises
    OrderingViolation with the offending node indices if it exceeds tol.
    """
    if table_lo.grid.n != table_hi.grid.n or not np.allclose(
        table_lo.grid.nodes, table_hi.grid.nodes
    ):
        raise ValueError("comparison_check needs two tables on the same grid")
    if tol is None:
        tol = 1e-10 * max(table_lo.problem.poverty.rho, table_hi.problem.poverty.rho)
    gap = table_lo.values - table_hi.values
    worst = float(gap.max())
    if worst > tol:
        nodes = np.nonzero(gap > tol)[0]
        raise OrderingViolation(
            f"ordering violated at {nodes.size} nodes (worst gap {worst:.3e})",
            nodes.tolist(),
        )
    return worst
