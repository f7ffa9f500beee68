"""Dense linear programming and gauge minimization.

Problems in this package are tiny (rarely more than a few hundred
variables), so the LP solver is a plain two-phase tableau simplex with
Bland's rule.  After the last pivot the basic solution and the duals are
recomputed from the original data against the optimal basis, which keeps
certificates accurate to a few ulps instead of accumulating tableau drift.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._tolerances import DEFAULT_TOL, Tolerances
from .exceptions import InputError, SolverError, SpanError

_PIVOT_EPS = 1e-11
_HARRIS = 1e-11  # primal infeasibility tolerated by the ratio test, relative to the rhs scale

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


def _as_matrix(a, ncols, name):
    if a is None:
        return np.zeros((0, ncols))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, ncols))
    if a.ndim != 2 or a.shape[1] != ncols:
        raise InputError(f"{name} must have {ncols} columns, got shape {a.shape}")
    return a


def _as_vector(b, n, name):
    if b is None:
        return np.zeros(n)
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.shape[0] != n:
        raise InputError(f"{name} must have length {n}, got {b.shape[0]}")
    return b


@dataclass(frozen=True)
class LinearProgram:
    """``min`` or ``max`` of ``cost @ x`` subject to

    ``equality_matrix @ x == equality_rhs``,
    ``inequality_matrix @ x <= inequality_rhs`` and
    ``x >= variable_lower_bounds`` (entries may be ``-inf`` for free variables).
    """

    cost: np.ndarray
    objective_sense: str = "min"
    equality_matrix: Optional[np.ndarray] = None
    equality_rhs: Optional[np.ndarray] = None
    inequality_matrix: Optional[np.ndarray] = None
    inequality_rhs: Optional[np.ndarray] = None
    variable_lower_bounds: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.asarray(self.cost, dtype=float).reshape(-1)
        n = c.shape[0]
        if self.objective_sense not in ("min", "max"):
            raise InputError(f"objective_sense must be 'min' or 'max', got {self.objective_sense!r}")
        A_eq = _as_matrix(self.equality_matrix, n, "equality_matrix")
        b_eq = _as_vector(self.equality_rhs, A_eq.shape[0], "equality_rhs")
        A_ub = _as_matrix(self.inequality_matrix, n, "inequality_matrix")
        b_ub = _as_vector(self.inequality_rhs, A_ub.shape[0], "inequality_rhs")
        lb = _as_vector(self.variable_lower_bounds, n, "variable_lower_bounds")
        for name, arr in (("cost", c), ("equality_matrix", A_eq), ("equality_rhs", b_eq),
                          ("inequality_matrix", A_ub), ("inequality_rhs", b_ub)):
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} contains non-finite coefficients")
        if np.any(np.isnan(lb)) or np.any(lb == np.inf):
            raise InputError("variable_lower_bounds must be finite or -inf")
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "equality_matrix", A_eq)
        object.__setattr__(self, "equality_rhs", b_eq)
        object.__setattr__(self, "inequality_matrix", A_ub)
        object.__setattr__(self, "inequality_rhs", b_ub)
        object.__setattr__(self, "variable_lower_bounds", lb)

    @property
    def n_variables(self):
        return self.cost.shape[0]


@dataclass(frozen=True)
class LPSolution:
    """Result of :func:`solve_lp`.

    ``dual`` stacks the multipliers of the equality rows followed by the
    inequality rows, signed so that ``cost - A_eq.T @ y_eq - A_ub.T @ y_ub``
    equals ``reduced_costs``.  For a minimization the reduced costs are
    nonnegative on bounded variables and the inequality multipliers are
    nonpositive; for a maximization both signs flip.
    """

    status: str
    primal: Optional[np.ndarray] = None
    dual: Optional[np.ndarray] = None
    objective: float = np.nan
    reduced_costs: Optional[np.ndarray] = None
    dual_objective: float = np.nan
    iterations: int = 0
    primal_residual: float = np.nan
    complementarity_residual: float = np.nan

    @property
    def is_optimal(self):
        return self.status == OPTIMAL


def _pivot(tab, r, j):
    tab[r] /= tab[r, j]
    col = tab[:, j].copy()
    col[r] = 0.0
    nz = np.nonzero(np.abs(col) > 0.0)[0]
    if nz.size:
        tab[nz] -= np.outer(col[nz], tab[r])


def _run_simplex(tab, basis, allowed, max_iter):
    """Simplex on ``tab`` (last row: reduced costs, last col: rhs).

    Entering column by Bland's rule.  Among rows tied in the ratio test the
    largest pivot element wins, which keeps degenerate problems stable;
    after a long run of degenerate pivots ties go to the smallest basic
    index instead (pure Bland), so cycling is impossible.
    Returns ``(status, iterations)``.
    """
    m = tab.shape[0] - 1
    it = 0
    stalled = 0
    while True:
        red = tab[-1, :-1]
        cand = np.nonzero((red < -_PIVOT_EPS) & allowed)[0]
        if cand.size == 0:
            return OPTIMAL, it
        if it >= max_iter:
            raise SolverError(f"simplex iteration limit {max_iter} exceeded")
        j = int(cand[0])
        col = tab[:m, j]
        rows = np.nonzero(col > _PIVOT_EPS)[0]
        if rows.size == 0:
            return UNBOUNDED, it
        rhs = tab[rows, -1]
        ratios = rhs / col[rows]
        best = ratios.min()
        if stalled < 50:
            # Harris: allow a step up to the relaxed bound, take the largest pivot
            delta = _HARRIS * (1.0 + np.abs(tab[:m, -1]).max())
            bound = ((rhs + delta) / col[rows]).min()
            elig = rows[ratios <= bound]
            r = int(elig[np.argmax(col[elig])])
        else:
            ties = rows[ratios <= best * (1.0 + 1e-12)]
            r = int(min(ties, key=lambda i: basis[i]))
        stalled = stalled + 1 if best <= 1e-12 else 0
        _pivot(tab, r, j)
        basis[r] = j
        np.maximum(tab[:m, -1], 0.0, out=tab[:m, -1])
        it += 1


def _reinvert(tab, basis, A, b, c):
    """Rebuild a phase-2 tableau for ``basis`` from the original data."""
    B = A[:, basis]
    body = np.linalg.solve(B, np.column_stack([A, b]))
    tab[:-1] = body
    cB = c[basis]
    tab[-1, :-1] = c - cB @ body[:, :-1]
    tab[-1, -1] = -cB @ body[:, -1]


def solve_lp(prog: LinearProgram, tol: Tolerances = DEFAULT_TOL, max_iter: int = 20000) -> LPSolution:
    """Solve ``prog`` exactly up to floating point.

    Infeasible and unbounded problems are reported through ``status``; an
    exhausted iteration budget raises :class:`SolverError`.
    """
    c = prog.cost
    n = prog.n_variables
    A_eq, b_eq = prog.equality_matrix, prog.equality_rhs
    A_ub, b_ub = prog.inequality_matrix, prog.inequality_rhs
    lb = prog.variable_lower_bounds
    sign = 1.0 if prog.objective_sense == "min" else -1.0

    finite = np.isfinite(lb)
    lb0 = np.where(finite, lb, 0.0)
    # x = T @ y + lb0 with y >= 0; free variables split in two columns
    cols = []
    for j in range(n):
        cols.append((j, 1.0))
        if not finite[j]:
            cols.append((j, -1.0))
    n0 = len(cols)
    T = np.zeros((n, n0))
    for k, (j, s) in enumerate(cols):
        T[j, k] = s

    m_eq, m_ub = A_eq.shape[0], A_ub.shape[0]
    m = m_eq + m_ub
    N = n0 + m_ub
    A = np.zeros((m, N))
    A[:m_eq, :n0] = A_eq @ T
    A[m_eq:, :n0] = A_ub @ T
    A[m_eq:, n0:] = np.eye(m_ub)
    b = np.concatenate([b_eq - A_eq @ lb0, b_ub - A_ub @ lb0])
    row_sign = np.where(b < 0, -1.0, 1.0)
    A *= row_sign[:, None]
    b = b * row_sign
    c_std = np.concatenate([sign * (c @ T), np.zeros(m_ub)])

    # phase 1 tableau: [A | artificials | b]; inequality rows with b >= 0 start on their slack
    needs = np.ones(m, dtype=bool)
    needs[m_eq:] = row_sign[m_eq:] < 0
    art = np.nonzero(needs)[0]
    n_art = art.size
    tab = np.zeros((m + 1, N + n_art + 1))
    tab[:m, :N] = A
    tab[art, N + np.arange(n_art)] = 1.0
    tab[:m, -1] = b
    tab[-1, :N] = -A[art].sum(axis=0)
    tab[-1, -1] = -b[art].sum()
    basis = [n0 + r - m_eq for r in range(m)]
    for k, r in enumerate(art):
        basis[r] = N + k
    allowed = np.zeros(N + n_art, dtype=bool)
    allowed[:N] = True
    _, it1 = _run_simplex(tab, basis, allowed, max_iter)

    scale = 1.0 + (np.abs(b).max() if m else 0.0)
    if -tab[-1, -1] > tol.feas * scale:
        return LPSolution(status=INFEASIBLE, iterations=it1)

    # drive artificials out of the basis; drop rows that are redundant
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] >= N:
            row = tab[r, :N]
            cand = np.nonzero(np.abs(row) > 1e-9)[0]
            if cand.size:
                j = int(cand[np.argmax(np.abs(row[cand]))])
                _pivot(tab, r, j)
                basis[r] = j
            else:
                keep[r] = False
    rows = np.nonzero(keep)[0]
    basis = [basis[r] for r in rows]
    tab2 = np.zeros((rows.size + 1, N + 1))
    tab2[:-1, :N] = tab[rows, :N]
    tab2[:-1, -1] = tab[rows, -1]
    cB = c_std[basis]
    tab2[-1, :N] = c_std - cB @ tab2[:-1, :N]
    tab2[-1, -1] = -cB @ tab2[:-1, -1]
    A_kept, b_kept = A[rows], b[rows]
    it2 = 0
    for _ in range(5):
        status, k = _run_simplex(tab2, basis, np.ones(N, dtype=bool), max_iter - it2)
        it2 += k
        if status == UNBOUNDED:
            return LPSolution(status=UNBOUNDED, iterations=it1 + it2)
        # accumulated rounding can hide an improving column; confirm on fresh data
        try:
            _reinvert(tab2, basis, A_kept, b_kept, c_std)
        except np.linalg.LinAlgError:
            break
        if not np.any(tab2[-1, :-1] < -_PIVOT_EPS * (1.0 + np.abs(c_std).max())):
            break
        tab2[:-1, -1] = np.maximum(tab2[:-1, -1], 0.0)

    # refinement against the original data
    y_std = np.zeros(N)
    y_std[basis] = tab2[:-1, -1]
    Bmat = A[np.ix_(rows, basis)]
    try:
        xb = np.linalg.solve(Bmat, b[rows])
        if np.all(xb >= -tol.feas * scale):
            y_std[basis] = np.maximum(xb, 0.0)
        duals_kept = np.linalg.solve(Bmat.T, c_std[basis])
    except np.linalg.LinAlgError:
        duals_kept = np.linalg.lstsq(Bmat.T, c_std[basis], rcond=None)[0]
    y_s = np.zeros(m)
    y_s[rows] = duals_kept
    y_s *= row_sign
    dual = sign * y_s

    x = T @ y_std[:n0] + lb0
    red = c - A_eq.T @ dual[:m_eq] - A_ub.T @ dual[m_eq:]
    objective = float(c @ x)
    dual_objective = float(b_eq @ dual[:m_eq] + b_ub @ dual[m_eq:] + red[finite] @ lb[finite])

    res = 0.0
    if m_eq:
        res = max(res, float(np.abs(A_eq @ x - b_eq).max()))
    slack = b_ub - A_ub @ x
    if m_ub:
        res = max(res, float(np.maximum(-slack, 0.0).max()))
    if finite.any():
        res = max(res, float(np.maximum(lb[finite] - x[finite], 0.0).max()))
    comp = 0.0
    if finite.any():
        comp = max(comp, float(np.abs((x[finite] - lb[finite]) * red[finite]).max()))
    if (~finite).any():
        comp = max(comp, float(np.abs(red[~finite]).max()))
    if m_ub:
        comp = max(comp, float(np.abs(slack * dual[m_eq:]).max()))
    if res > 1e3 * tol.feas * scale:
        raise SolverError(f"simplex lost feasibility (residual {res:.3g})")
    return LPSolution(status=OPTIMAL, primal=x, dual=dual, objective=objective,
                      reduced_costs=red, dual_objective=dual_objective,
                      iterations=it1 + it2, primal_residual=res,
                      complementarity_residual=comp)


@dataclass(frozen=True)
class GaugeProgram:
    """min psi_p(h) subject to (target, h) = 1 and h in span(span_basis).

    ``span_basis`` holds orthonormal basis vectors as rows.
    """

    p: float
    points: np.ndarray
    weights: np.ndarray
    span_basis: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.points, dtype=float))
        q = np.asarray(self.weights, dtype=float).reshape(-1)
        a = np.asarray(self.target, dtype=float).reshape(-1)
        B = np.asarray(self.span_basis, dtype=float).reshape(-1, x.shape[1])
        if q.shape[0] != x.shape[0]:
            raise InputError("points and weights have different lengths")
        if a.shape[0] != x.shape[1]:
            raise InputError("target dimension does not match points")
        if np.any(q <= 0) or abs(q.sum() - 1.0) > DEFAULT_TOL.feas:
            raise InputError("weights must be positive and sum to 1")
        if self.p not in (1, 2, np.inf):
            raise InputError(f"p must be 1, 2 or inf, got {self.p}")
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "weights", q)
        object.__setattr__(self, "target", a)
        object.__setattr__(self, "span_basis", B)


@dataclass(frozen=True)
class GaugeMinimum:
    value: float
    minimizer: np.ndarray


def _psi2_squared(C, q, u):
    g = C @ u
    neg = np.minimum(g, 0.0)
    return float(q @ (neg * neg))


def _min_psi2(C, q, alpha, max_iter=10_000):
    """Minimize sum_i q_i min(0, C_i u)^2 over the hyperplane alpha.u = 1.

    The squared objective is C^1 and piecewise quadratic, so a generalized
    Newton step restricted to the hyperplane, globalized by backtracking,
    terminates on the exact minimizer once the active set settles.
    """
    r = alpha.shape[0]
    aa = float(alpha @ alpha)
    proj = np.eye(r) - np.outer(alpha, alpha) / aa
    u = alpha / aa
    F = _psi2_squared(C, q, u)
    kkt = np.zeros((r + 1, r + 1))
    kkt[:r, r] = alpha
    kkt[r, :r] = alpha
    for _ in range(max_iter):
        g = C @ u
        neg = g < 0
        grad = 2.0 * C[neg].T @ (q[neg] * g[neg])
        pg = proj @ grad
        if np.linalg.norm(pg) <= 1e-15 * max(1.0, np.linalg.norm(grad)):
            break
        H = 2.0 * (C[neg].T * q[neg]) @ C[neg]
        kkt[:r, :r] = H
        rhs = np.concatenate([-grad, [0.0]])
        step = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:r]
        step = proj @ step
        if not np.all(np.isfinite(step)) or step @ grad >= 0:
            step = -pg
        slope = float(step @ grad)
        t = 1.0
        while True:
            F_new = _psi2_squared(C, q, u + t * step)
            if F_new <= F + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-30:
                break
        if t < 1e-30 or F_new >= F:
            break
        u = u + t * step
        done = F - F_new <= 1e-16 * F
        F = F_new
        if done:
            break
    else:
        raise SolverError("psi_2 minimization did not converge")
    return float(np.sqrt(F)), u


def minimize_gauge(prog: GaugeProgram, tol: Tolerances = DEFAULT_TOL) -> GaugeMinimum:
    """Constrained minimum of psi_p over {h in D : (target, h) = 1}.

    p = 1 and p = inf are solved as linear programs; p = 2 by a
    descent method on the squared gauge.
    """
    x, q, a, B = prog.points, prog.weights, prog.target, prog.span_basis
    alpha = B @ a
    resid = np.linalg.norm(a - B.T @ alpha)
    if resid > tol.feas * (1.0 + np.linalg.norm(a)):
        raise SpanError(f"target is not in the span (residual {resid:.3g})", residual=resid)
    if np.linalg.norm(alpha) <= tol.feas:
        raise InputError("target must be nonzero")
    C = x @ B.T  # point coordinates in the basis
    n, r = C.shape
    if prog.p == 2:
        value, u = _min_psi2(C, q, alpha)
        return GaugeMinimum(value, B.T @ u)

    if prog.p == 1:
        # variables: u (free, r), t (>= 0, n); min q.t ; -t_i - C_i u <= 0
        cost = np.concatenate([np.zeros(r), q])
        A_ub = np.hstack([-C, -np.eye(n)])
        lb = np.concatenate([np.full(r, -np.inf), np.zeros(n)])
    else:
        # variables: u (free, r), t (free); min t ; -t - C_i u <= 0
        cost = np.concatenate([np.zeros(r), [1.0]])
        A_ub = np.hstack([-C, -np.ones((n, 1))])
        lb = np.full(r + 1, -np.inf)
    A_eq = np.concatenate([alpha, np.zeros(cost.shape[0] - r)])[None, :]
    sol = solve_lp(LinearProgram(cost=cost, objective_sense="min",
                                 equality_matrix=A_eq, equality_rhs=[1.0],
                                 inequality_matrix=A_ub, inequality_rhs=np.zeros(n),
                                 variable_lower_bounds=lb), tol)
    if sol.status == INFEASIBLE:
        raise SpanError("(target, h) = 1 is unreachable inside the span")
    if sol.status == UNBOUNDED:
        # psi_inf can go negative when the support lies in an open half-space
        return GaugeMinimum(-np.inf, np.full(x.shape[1], np.nan))
    u = sol.primal[:r]
    return GaugeMinimum(sol.objective, B.T @ u)
