"""One-period criteria for martingale densities bounded below by a floor.

For a model (H, xi, f) with finite H the quantities computed here are

* ``a = E(f xi | H)`` per atom,
* ``s(a | T_p)`` per atom and ``v_p = ||s(a | T_p)||_q``,
* a density ``g >= f`` with ``E(g xi | H) = 0``.

Two oracles that do not go through the support function are provided so
the equalities can be checked: :func:`min_norm_density` (smallest
``||g - f||_q``) and :func:`primal_value_lp` (the expected-gain problem
solved directly over strategies).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from ._tolerances import DEFAULT_TOL, Tolerances
from .exceptions import InputError, NAViolationError, SolverError, SpanError
from .geometry import (minkowski_gauge, origin_in_relative_interior, psi, span,
                       support_T_p)
from .market import OnePeriodModel, lq_norm
from .optim import OPTIMAL, UNBOUNDED, LinearProgram, solve_lp


def conjugate(p):
    if p == 1:
        return np.inf
    if p == np.inf:
        return 1.0
    if p < 1:
        raise InputError("p must be >= 1")
    return p / (p - 1.0)


def _require_na(model, tol):
    for j, atom in enumerate(model.atoms):
        r = origin_in_relative_interior(atom.distribution, tol)
        if not r.holds:
            raise NAViolationError(f"atom {j}: origin is not in the relative interior of the support hull",
                                   location=j, separator=r.separator)


def a_vector(model: OnePeriodModel, atom: int, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """a = E(f xi | H) on one atom, checked to lie in the span of the support."""
    at = model.atoms[atom]
    dist = at.distribution
    a = (np.asarray(at.floor) * dist.weights) @ dist.points
    basis = span(dist, tol)
    if not basis.contains(a, tol):
        raise SpanError(f"atom {atom}: E(f xi | H) is not in the span of the support",
                        residual=basis.residual(a))
    return a


@dataclass(frozen=True)
class CriterionReport:
    p: float
    q: float
    probabilities: np.ndarray
    a: np.ndarray  # (atoms, d)
    support: np.ndarray  # s(a | T_p) per atom
    maximizers: np.ndarray  # h*_p per atom
    v: float
    na_holds: np.ndarray


def criterion(model: OnePeriodModel, p, tol: Tolerances = DEFAULT_TOL) -> CriterionReport:
    """Per-atom s(a | T_p) and v_p = ||s(a | T_p)||_q.

    Raises :class:`NAViolationError` (with a separating direction) when an
    atom violates the no-arbitrage condition.
    """
    _require_na(model, tol)
    a, s, h = [], [], []
    for j, atom in enumerate(model.atoms):
        aj = a_vector(model, j, tol)
        r = support_T_p(atom.distribution, aj, p, tol)
        a.append(aj)
        s.append(r.value)
        h.append(r.maximizer)
    q = conjugate(p)
    s = np.array(s)
    probs = model.probabilities
    return CriterionReport(p=p, q=q, probabilities=probs, a=np.array(a), support=s,
                           maximizers=np.array(h), v=lq_norm(s, q, probs),
                           na_holds=np.ones(len(model.atoms), dtype=bool))


@dataclass(frozen=True)
class OnePeriodDensity:
    g: List[np.ndarray]  # per atom, one value per support point
    phi: List[np.ndarray]
    residual: np.ndarray  # |E(g xi | H)| per atom (max norm)
    floor_margin: float  # min(g - f)
    excess: np.ndarray  # E(g - f | H) per atom
    nu: np.ndarray  # mu(-a | conv support) per atom

    @property
    def max_residual(self):
        return float(self.residual.max())


def _package_density(model, phi, tol):
    g, res, excess, nu, margin = [], [], [], [], np.inf
    for j, (atom, ph) in enumerate(zip(model.atoms, phi)):
        dist = atom.distribution
        gj = np.asarray(atom.floor) + ph
        g.append(gj)
        res.append(float(np.abs((dist.weights * gj) @ dist.points).max()))
        excess.append(float(dist.weights @ ph))
        margin = min(margin, float(ph.min()))
        nu.append(minkowski_gauge(-a_vector(model, j, tol), dist, tol).value)
    return OnePeriodDensity(g=g, phi=list(phi), residual=np.array(res), floor_margin=margin,
                            excess=np.array(excess), nu=np.array(nu))


def construct_density(model: OnePeriodModel, p=np.inf, tol: Tolerances = DEFAULT_TOL) -> OnePeriodDensity:
    """A density g = f + phi with E(g xi | H) = 0 and g >= f.

    For p = inf, phi solves the moment LP with target -a on every atom, so
    E(g - f | H) equals mu(-a | conv support) exactly.  Other p go through
    :func:`min_norm_density` with the conjugate exponent.
    """
    _require_na(model, tol)
    if p != np.inf:
        return _package_density(model, min_norm_density(model, conjugate(p), tol).phi, tol)
    phi = []
    for j, atom in enumerate(model.atoms):
        a = a_vector(model, j, tol)
        w = minkowski_gauge(-a, atom.distribution, tol)
        phi.append(w.witness / atom.distribution.weights)
    return _package_density(model, phi, tol)


@dataclass(frozen=True)
class MinNormDensity:
    q: float
    g: List[np.ndarray]
    phi: List[np.ndarray]
    value: float  # ||g - f||_q


def _moment_blocks(model, tol):
    rows, rhs = [], []
    for j, atom in enumerate(model.atoms):
        dist = atom.distribution
        a = a_vector(model, j, tol)
        rows.append((dist.weights[:, None] * dist.points).T)
        rhs.append(-a)
    return rows, rhs


def _nnls_eq(E, b, start, max_iter=None):
    """min 0.5 |psi|^2 s.t. E psi = b, psi >= 0, from a feasible ``start``.

    Primal active-set method; exact up to rounding once it terminates.
    """
    n = E.shape[1]
    x = np.maximum(start.astype(float), 0.0)
    work = x <= 0
    max_iter = max_iter or 20 * n + 100
    for _ in range(max_iter):
        free = ~work
        Ef = E[:, free]
        xf = x[free]
        if Ef.shape[1]:
            y = np.linalg.lstsq(Ef.T, xf, rcond=None)[0]
            step_f = Ef.T @ y - xf  # minus the projection of xf onto null(Ef)
        else:
            y = np.zeros(E.shape[0])
            step_f = np.zeros(0)
        if np.linalg.norm(step_f) <= 1e-13 * max(1.0, np.linalg.norm(xf)):
            mult = -(E[:, work].T @ y)
            if mult.size == 0 or mult.min() >= -1e-12 * max(1.0, np.abs(y).max()):
                return x
            idx = np.nonzero(work)[0][int(np.argmin(mult))]
            work[idx] = False
            continue
        step = np.zeros(n)
        step[free] = step_f
        neg = free & (step < 0)
        alpha, block = 1.0, None
        if neg.any():
            ratios = -x[neg] / step[neg]
            k = int(np.argmin(ratios))
            if ratios[k] < 1.0:
                alpha, block = float(ratios[k]), np.nonzero(neg)[0][k]
        x = x + alpha * step
        if block is not None:
            x[block] = 0.0
            work[block] = True
    raise SolverError("active-set QP did not converge")


def min_norm_density(model: OnePeriodModel, q, tol: Tolerances = DEFAULT_TOL) -> MinNormDensity:
    """Smallest ||g - f||_q over g >= f with E(g xi | H) = 0.

    q = 1 and q = inf are one linear program over all atoms at once; q = 2
    splits into independent per-atom quadratic programs.
    """
    _require_na(model, tol)
    rows, rhs = _moment_blocks(model, tol)
    sizes = [atom.distribution.size for atom in model.atoms]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    n = int(offs[-1])
    probs = model.probabilities
    mass = np.concatenate([p * atom.distribution.weights for p, atom in zip(probs, model.atoms)])

    if q == 2:
        phi = []
        for atom, E, b in zip(model.atoms, rows, rhs):
            sw = np.sqrt(atom.distribution.weights)
            Et = E / sw[None, :]
            start = _feasible_point(E, b, tol) * sw
            phi.append(_nnls_eq(Et, b, start) / sw)
        flat = np.concatenate(phi)
        value = float(np.sqrt(mass @ flat ** 2))
    elif q in (1, np.inf):
        d = model.dim
        extra = 1 if q == np.inf else 0
        A_eq = np.zeros((d * len(sizes), n + extra))
        for j, E in enumerate(rows):
            A_eq[j * d:(j + 1) * d, offs[j]:offs[j + 1]] = E
        b_eq = np.concatenate(rhs)
        if q == 1:
            prog = LinearProgram(cost=mass, equality_matrix=A_eq, equality_rhs=b_eq)
        else:
            cost = np.zeros(n + 1)
            cost[-1] = 1.0
            A_ub = np.hstack([np.eye(n), -np.ones((n, 1))])
            prog = LinearProgram(cost=cost, equality_matrix=A_eq, equality_rhs=b_eq,
                                 inequality_matrix=A_ub, inequality_rhs=np.zeros(n))
        sol = solve_lp(prog, tol)
        if sol.status != OPTIMAL:
            raise SolverError(f"min-norm density LP returned {sol.status}")
        flat = np.maximum(sol.primal[:n], 0.0)
        phi = [flat[offs[j]:offs[j + 1]] for j in range(len(sizes))]
        value = float(mass @ flat) if q == 1 else float(flat.max())
    else:
        raise InputError("q must be 1, 2 or inf")
    g = [np.asarray(atom.floor) + ph for atom, ph in zip(model.atoms, phi)]
    return MinNormDensity(q=q, g=g, phi=phi, value=value)


def _feasible_point(E, b, tol):
    sol = solve_lp(LinearProgram(cost=np.ones(E.shape[1]), equality_matrix=E, equality_rhs=b), tol)
    if sol.status != OPTIMAL:
        raise SolverError("moment constraints are infeasible")
    return sol.primal


def primal_value_lp(model: OnePeriodModel, p, tol: Tolerances = DEFAULT_TOL) -> float:
    """sup E(f (gamma, xi)) over gamma_j in D_j with ||(gamma, xi)^-||_p <= 1, for p in {1, inf}.

    Solved directly as one LP over all atoms.
    """
    if p not in (1, np.inf):
        raise InputError("primal LP is available for p = 1 and p = inf")
    blocks = []
    for atom in model.atoms:
        B = span(atom.distribution, tol)
        blocks.append((B, B.coordinates(atom.distribution.points)))
    nu = sum(B.rank for B, _ in blocks)
    n_out = sum(C.shape[0] for _, C in blocks)
    n_t = n_out if p == 1 else 0
    cost = np.zeros(nu + n_t)
    A_ub = np.zeros((n_out + (1 if p == 1 else 0), nu + n_t))
    b_ub = np.zeros(A_ub.shape[0])
    col = row = 0
    for (B, C), atom in zip(blocks, model.atoms):
        pj = atom.probability
        w = atom.distribution.weights
        r = B.rank
        cost[col:col + r] = pj * (np.asarray(atom.floor) * w) @ C
        for i in range(C.shape[0]):
            A_ub[row, col:col + r] = -C[i]
            if p == 1:
                A_ub[row, nu + row] = -1.0
                A_ub[-1, nu + row] = pj * w[i]
            else:
                b_ub[row] = 1.0
            row += 1
        col += r
    if p == 1:
        b_ub[-1] = 1.0
    lb = np.concatenate([np.full(nu, -np.inf), np.zeros(n_t)])
    sol = solve_lp(LinearProgram(cost=cost, objective_sense="max", inequality_matrix=A_ub,
                                 inequality_rhs=b_ub, variable_lower_bounds=lb), tol)
    if sol.status == UNBOUNDED:
        raise NAViolationError("expected gain is unbounded: the model admits arbitrage")
    return sol.objective


@dataclass(frozen=True)
class PrimalAttainment:
    gamma: np.ndarray  # per atom strategy
    achieved: float  # E(f (gamma*, xi))
    loss_norm: float  # ||(gamma*, xi)^-||_p
    bound_ok: bool
    max_sampled: float


def _gains(model, gamma):
    return [atom.distribution.points @ g for atom, g in zip(model.atoms, gamma)]


def _loss_norm(model, gains, p):
    if p == np.inf:
        return max(float(np.maximum(-x, 0.0).max()) for x in gains)
    tot = sum(atom.probability * float(atom.distribution.weights @ np.maximum(-x, 0.0) ** p)
              for atom, x in zip(model.atoms, gains))
    return tot ** (1.0 / p)


def _expected_f_gain(model, gains):
    return sum(atom.probability * float((atom.distribution.weights * atom.floor) @ x)
               for atom, x in zip(model.atoms, gains))


def primal_attainment(model: OnePeriodModel, p, report: CriterionReport, n_samples: int = 1000,
                      seed: int = 0, tol: Tolerances = DEFAULT_TOL) -> PrimalAttainment:
    """Strategy gamma* = w h*_p attaining v_p, and a sampled upper-bound check.

    The atom weights w are Hoelder-optimal: w = 1 for p = inf, all mass on
    the largest s(a|T_1) for p = 1, and w proportional to s^(q-1) otherwise.
    """
    s, h, probs = report.support, report.maximizers, report.probabilities
    k = len(model.atoms)
    if report.v <= 0:
        w = np.zeros(k)
    elif p == np.inf:
        w = np.ones(k)
    elif p == 1:
        w = np.zeros(k)
        jmax = int(np.argmax(s))
        w[jmax] = 1.0 / probs[jmax]
    else:
        q = conjugate(p)
        w = s ** (q - 1.0) / report.v ** (q - 1.0)
    gamma = w[:, None] * h
    gains = _gains(model, gamma)
    achieved = _expected_f_gain(model, gains)
    loss = _loss_norm(model, gains, p)

    rng = np.random.default_rng(seed)
    bases = [span(atom.distribution, tol) for atom in model.atoms]
    best = -np.inf
    for t in range(n_samples):
        if t % 2 and report.v > 0:
            g = gamma + 0.1 * rng.normal(size=gamma.shape) * np.abs(gamma).max()
            g = np.array([B.project(x) for B, x in zip(bases, g)])
        else:
            g = np.array([B.vectors.T @ rng.normal(size=B.rank) for B in bases]).reshape(k, -1)
        gs = _gains(model, g)
        L = _loss_norm(model, gs, p)
        if L <= 0:
            continue
        scale = rng.uniform(0.5, 1.0) / L
        best = max(best, scale * _expected_f_gain(model, gs))
    return PrimalAttainment(gamma=gamma, achieved=achieved, loss_norm=loss,
                            bound_ok=bool(best <= report.v + tol.gauge), max_sampled=best)
