"""Convex geometry of a finitely supported conditional distribution.

A :class:`DiscreteDistribution` is the law of the price increment on one
atom of the conditioning algebra.  Everything here works in the linear span
of its support, where the no-arbitrage condition makes the relevant level
sets compact.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._tolerances import DEFAULT_TOL, Tolerances
from .exceptions import InputError, NAViolationError, SpanError
from .optim import (INFEASIBLE, OPTIMAL, GaugeProgram, LinearProgram,
                    minimize_gauge, solve_lp)


class InputConsistencyWarning(UserWarning):
    """Raised (as a warning) when inputs contradict a standing assumption."""


@dataclass(frozen=True)
class DiscreteDistribution:
    """Distinct points ``x_i`` in R^d with positive weights summing to one."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        q = np.asarray(self.weights, dtype=float).reshape(-1)
        if x.ndim != 2 or x.shape[0] == 0:
            raise InputError("points must be a non-empty (n, d) array")
        if q.shape[0] != x.shape[0]:
            raise InputError("points and weights have different lengths")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(q))):
            raise InputError("points and weights must be finite")
        if np.any(q <= 0):
            raise InputError("weights must be strictly positive")
        if abs(q.sum() - 1.0) > DEFAULT_TOL.feas:
            raise InputError(f"weights sum to {q.sum():.12g}, expected 1")
        tol = DEFAULT_TOL.feas
        for i in range(x.shape[0]):
            d = np.abs(x[i + 1:] - x[i]).max(axis=1) if i + 1 < x.shape[0] else np.zeros(0)
            if np.any(d <= tol * (1.0 + np.abs(x[i]).max())):
                raise InputError("points must be pairwise distinct")
        x.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "weights", q)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def size(self):
        return self.points.shape[0]

    @classmethod
    def from_outcomes(cls, points, weights, values=None, tol: Tolerances = DEFAULT_TOL):
        """Build a distribution from possibly repeated outcomes.

        Coincident points are merged and their weights summed.  When
        ``values`` is given, the weight-averaged value per merged point is
        returned together with the index map ``outcome -> point``.
        """
        x = np.asarray(points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        w = np.asarray(weights, dtype=float).reshape(-1)
        reps, index = [], np.empty(x.shape[0], dtype=int)
        for i, xi in enumerate(x):
            for k, r in enumerate(reps):
                if np.abs(xi - r).max() <= tol.feas * (1.0 + np.abs(r).max()):
                    index[i] = k
                    break
            else:
                index[i] = len(reps)
                reps.append(xi)
        mass = np.bincount(index, weights=w, minlength=len(reps))
        dist = cls(np.array(reps), mass / mass.sum())
        if values is None:
            return dist
        v = np.asarray(values, dtype=float).reshape(-1)
        avg = np.bincount(index, weights=w * v, minlength=len(reps)) / mass
        return dist, avg, index


@dataclass(frozen=True)
class SpanBasis:
    """Orthonormal basis (rows of ``vectors``) of the span of a support."""

    vectors: np.ndarray

    @property
    def rank(self):
        return self.vectors.shape[0]

    def project(self, y):
        y = np.asarray(y, dtype=float)
        return self.vectors.T @ (self.vectors @ y)

    def coordinates(self, y):
        return np.asarray(y, dtype=float) @ self.vectors.T

    def residual(self, y):
        y = np.asarray(y, dtype=float)
        return float(np.linalg.norm(y - self.project(y)))

    def contains(self, y, tol: Tolerances = DEFAULT_TOL):
        return self.residual(y) <= tol.feas * (1.0 + np.linalg.norm(y))


@dataclass(frozen=True)
class GaugeResult:
    value: float
    witness: np.ndarray  # theta_i >= 0, sum theta_i x_i = y, sum theta_i = value
    dual: Optional[np.ndarray] = None  # lambda with (lambda, x_i) <= 1, (y, lambda) = value


@dataclass(frozen=True)
class SupportResult:
    value: float
    maximizer: np.ndarray


@dataclass(frozen=True)
class InteriorResult:
    holds: bool
    witness: Optional[np.ndarray] = None
    separator: Optional[np.ndarray] = None
    margin: float = 0.0


def span(dist: DiscreteDistribution, tol: Tolerances = DEFAULT_TOL) -> SpanBasis:
    """Orthonormal basis of the linear span of the support."""
    x = dist.points
    if not np.any(x):
        return SpanBasis(np.zeros((0, dist.dim)))
    u, s, _ = np.linalg.svd(x.T, full_matrices=False)
    r = int(np.sum(s > tol.rank * s[0]))
    basis = u[:, :r].T.copy()
    # sign convention: first nonzero entry of each vector positive
    for k in range(r):
        nz = np.nonzero(np.abs(basis[k]) > 1e-12)[0]
        if nz.size and basis[k, nz[0]] < 0:
            basis[k] = -basis[k]
    return SpanBasis(basis)


def support_function(h, dist: DiscreteDistribution) -> float:
    """max_i (h, x_i)."""
    return float(np.max(dist.points @ np.asarray(h, dtype=float).reshape(-1)))


def origin_in_relative_interior(dist: DiscreteDistribution, tol: Tolerances = DEFAULT_TOL) -> InteriorResult:
    """Test 0 in ri conv(support) via max t s.t. sum theta_i x_i = 0, sum theta = 1, theta >= t.

    Nonzero points are rescaled to unit length first; this leaves the
    answer unchanged and makes the margin ``t*`` scale free.  On success
    the returned witness is a strictly positive convex combination of the
    original points equal to zero; on failure ``separator`` is a direction
    h in the span with (h, x_i) >= 0 for all i and > 0 for some i.
    """
    x = dist.points
    n = x.shape[0]
    norms = np.linalg.norm(x, axis=1)
    nonzero = norms > 0
    if not nonzero.any():
        return InteriorResult(True, witness=np.full(n, 1.0 / n), margin=1.0 / n)
    B = span(dist, tol)
    C = np.zeros((n, B.rank))
    C[nonzero] = B.coordinates(x[nonzero] / norms[nonzero, None])
    # theta_i = t + s_i, s_i >= 0, t free
    cost = np.concatenate([np.zeros(n), [1.0]])
    A_eq = np.zeros((B.rank + 1, n + 1))
    A_eq[:B.rank, :n] = C.T
    A_eq[:B.rank, n] = C.sum(axis=0)
    A_eq[B.rank, :n] = 1.0
    A_eq[B.rank, n] = n
    b_eq = np.zeros(B.rank + 1)
    b_eq[-1] = 1.0
    lb = np.concatenate([np.zeros(n), [-np.inf]])
    sol = solve_lp(LinearProgram(cost=cost, objective_sense="max", equality_matrix=A_eq,
                                 equality_rhs=b_eq, variable_lower_bounds=lb), tol)
    t = sol.objective if sol.status == OPTIMAL else -np.inf
    if t > tol.feas:
        theta_unit = sol.primal[:n] + t
        theta = np.where(nonzero, theta_unit / np.where(nonzero, norms, 1.0), theta_unit)
        return InteriorResult(True, witness=theta / theta.sum(), margin=float(t))
    return InteriorResult(False, separator=_separator(C, B), margin=float(t))


def _separator(C, B):
    # max sum_i (u, c_i) s.t. 0 <= (u, c_i) <= 1
    n, r = C.shape
    A_ub = np.vstack([-C, C])
    b_ub = np.concatenate([np.zeros(n), np.ones(n)])
    sol = solve_lp(LinearProgram(cost=C.sum(axis=0), objective_sense="max",
                                 inequality_matrix=A_ub, inequality_rhs=b_ub,
                                 variable_lower_bounds=np.full(r, -np.inf)))
    return B.vectors.T @ sol.primal


def _check_in_span(y, basis, tol):
    res = basis.residual(y)
    if res > tol.feas * (1.0 + np.linalg.norm(y)):
        raise SpanError(f"vector {np.array2string(np.asarray(y))} is not in the span of the support "
                        f"(residual {res:.3g})", residual=res)


def minkowski_gauge(y, dist: DiscreteDistribution, tol: Tolerances = DEFAULT_TOL) -> GaugeResult:
    """mu(y | conv support) through the moment LP min sum theta s.t. sum theta_i x_i = y, theta >= 0.

    ``value`` is ``inf`` when y is outside the cone generated by the support.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != dist.dim:
        raise InputError("dimension mismatch between y and the distribution")
    B = span(dist, tol)
    _check_in_span(y, B, tol)
    n = dist.size
    if not np.any(y) or B.rank == 0:
        return GaugeResult(0.0, np.zeros(n), np.zeros(dist.dim))
    C = B.coordinates(dist.points)
    if B.rank == 1:
        return _gauge_on_line(B.coordinates(y)[0], C[:, 0], B.vectors[0])
    sol = solve_lp(LinearProgram(cost=np.ones(n), equality_matrix=C.T,
                                 equality_rhs=B.coordinates(y)), tol)
    if sol.status == INFEASIBLE:
        return GaugeResult(np.inf, np.full(n, np.nan))
    lam = B.vectors.T @ sol.dual
    return GaugeResult(float(sol.primal.sum()), sol.primal, lam)


def _gauge_on_line(s, t, direction):
    # collinear support: only the extreme point on the side of s is needed
    n = t.shape[0]
    k = int(np.argmax(t)) if s > 0 else int(np.argmin(t))
    if t[k] * s <= 0:
        return GaugeResult(np.inf, np.full(n, np.nan))
    theta = np.zeros(n)
    theta[k] = s / t[k]
    return GaugeResult(float(theta[k]), theta, direction / t[k])


def psi(dist: DiscreteDistribution, h, p) -> float:
    """L^p norm of the negative part of (h, x) under the distribution.

    For p = inf this is s(-h | support) returned as is; a negative value
    means the support lies in an open half-space and triggers a warning.
    """
    g = dist.points @ np.asarray(h, dtype=float).reshape(-1)
    if p == np.inf:
        val = float(np.max(-g))
        if val < 0:
            warnings.warn("psi_inf is negative: the support lies in an open half-space",
                          InputConsistencyWarning, stacklevel=2)
        return val
    if p < 1:
        raise InputError("p must be >= 1")
    neg = np.maximum(-g, 0.0)
    if p == 1:
        return float(dist.weights @ neg)
    return float((dist.weights @ neg ** p) ** (1.0 / p))


def _closed_form_1d(dist, a, p):
    x = dist.points[:, 0]
    q = dist.weights
    if p == np.inf:
        lo, hi = -x.min(), x.max()  # |delta_1|, delta_2
    else:
        lo = float(q @ np.maximum(-x, 0.0) ** p) ** (1.0 / p)
        hi = float(q @ np.maximum(x, 0.0) ** p) ** (1.0 / p)
    if a > 0:
        return a / lo, np.array([1.0 / lo])
    return -a / hi, np.array([-1.0 / hi])


def support_T_p(dist: DiscreteDistribution, a, p, tol: Tolerances = DEFAULT_TOL,
                method: str = "auto") -> SupportResult:
    """s(a | T_p) with T_p = {h in span : psi_p(h) <= 1}, plus a maximizer.

    ``method`` selects the route: ``"auto"`` uses the gauge LP for
    p = inf, the scalar closed form for d = 1 and gauge minimization
    otherwise; ``"closed_form"`` and ``"optimize"`` force one side so the
    two can be compared.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape[0] != dist.dim:
        raise InputError("dimension mismatch between a and the distribution")
    interior = origin_in_relative_interior(dist, tol)
    if not interior.holds:
        raise NAViolationError("origin is not in the relative interior of the support hull",
                               separator=interior.separator)
    B = span(dist, tol)
    _check_in_span(a, B, tol)
    if not np.any(a) or B.rank == 0:
        return SupportResult(0.0, np.zeros(dist.dim))
    if method == "closed_form" or (method == "auto" and dist.dim == 1 and p != np.inf):
        if dist.dim != 1:
            raise InputError("closed form is only available for d = 1")
        value, h = _closed_form_1d(dist, a[0], p)
        return SupportResult(float(value), h)
    if p == np.inf:
        g = minkowski_gauge(-a, dist, tol)
        return SupportResult(g.value, -g.dual)
    if p not in (1, 2):
        raise InputError(f"p = {p} is supported only for d = 1")
    m = minimize_gauge(GaugeProgram(p=p, points=dist.points, weights=dist.weights,
                                    span_basis=B.vectors, target=a), tol)
    return SupportResult(1.0 / m.value, m.minimizer / m.value)
