import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from martfloor.datasets import make_increments, make_one_period_model
from martfloor.exceptions import NAViolationError
from martfloor.geometry import DiscreteDistribution, origin_in_relative_interior, psi, span
from martfloor.market import Atom, OnePeriodModel
from martfloor.one_period import (a_vector, conjugate, construct_density, criterion,
                                  min_norm_density, primal_attainment, primal_value_lp)
from martfloor.optim import OPTIMAL, LinearProgram, solve_lp

INF = np.inf


def model_of(*atoms):
    """atoms: (prob, points, weights, floor)."""
    return OnePeriodModel([Atom(p, DiscreteDistribution(np.reshape(x, (len(w), -1)), w), np.asarray(f, float))
                           for p, x, w, f in atoms])


def binomial(f=(1.0, 1.0)):
    return model_of((1.0, [1.0, -1.0], [0.5, 0.5], f))


def first_period_slice(J):
    probs = np.array([2.0 ** -j for j in range(1, J + 1)])
    probs /= probs.sum()
    return model_of(*[(p, [1.0, -2.0 ** (-j / 2)], [0.5, 0.5], [1.0, 1.0])
                      for p, j in zip(probs, range(1, J + 1))]), probs


def p2_primal_cvxpy(model):
    """sup E(f (gamma, xi)) over ||(gamma, xi)^-||_2 <= 1, gamma_j in D_j."""
    objective, loss, vars_ = 0, 0, []
    for atom in model.atoms:
        B = span(atom.distribution)
        C = B.coordinates(atom.distribution.points)
        c = cp.Variable(B.rank)
        vars_.append(c)
        x = C @ c
        w = atom.distribution.weights
        objective += atom.probability * ((w * atom.floor) @ x)
        loss += atom.probability * cp.sum(cp.multiply(w, cp.square(cp.neg(x))))
    prob = cp.Problem(cp.Maximize(objective), [loss <= 1])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return prob.value


# -- a -----------------------------------------------------------------------

def test_a_symmetric_is_zero():
    assert a_vector(binomial(), 0) == pytest.approx([0.0])


@pytest.mark.parametrize("j", [1, 2, 3, 5])
def test_a_first_period_atom(j):
    model = model_of((1.0, [1.0, -2.0 ** (-j / 2)], [0.5, 0.5], [1.0, 1.0]))
    assert a_vector(model, 0)[0] == pytest.approx((1 - 2.0 ** (-j / 2)) / 2, abs=1e-15)
    if j == 2:
        assert a_vector(model, 0)[0] == 0.25


def test_a_is_linear_in_floor():
    model = make_one_period_model(1, d=2)
    doubled = OnePeriodModel([Atom(a.probability, a.distribution, 2 * a.floor) for a in model.atoms])
    for j in range(len(model.atoms)):
        np.testing.assert_allclose(a_vector(doubled, j), 2 * a_vector(model, j), atol=1e-14)


def test_conjugate():
    assert conjugate(1) == INF and conjugate(INF) == 1.0 and conjugate(2) == 2.0


# -- criterion ----------------------------------------------------------------

@pytest.mark.parametrize("p", [1, 2, INF])
def test_symmetric_binomial_has_zero_value(p):
    rep = criterion(binomial(), p)
    assert rep.v == 0.0 and rep.q == conjugate(p)


def test_first_period_slice_values():
    J = 8
    model, probs = first_period_slice(J)
    rep = criterion(model, INF)
    per_atom = np.array([(2.0 ** (j / 2) - 1) / 2 for j in range(1, J + 1)])
    np.testing.assert_allclose(rep.support, per_atom, rtol=1e-12)
    assert rep.v == pytest.approx(probs @ per_atom, rel=1e-12)


def test_na_violation_carries_separator():
    model = model_of((0.5, [1.0, -1.0], [0.5, 0.5], [1, 1]), (0.5, [1.0, 2.0], [0.5, 0.5], [1, 1]))
    with pytest.raises(NAViolationError) as err:
        criterion(model, INF)
    assert err.value.location == 1
    assert err.value.separator[0] > 0


@pytest.mark.parametrize("seed", range(12))
def test_v_inf_matches_primal_lp(seed):
    model = make_one_period_model(seed, d=2)
    assert criterion(model, INF).v == pytest.approx(primal_value_lp(model, INF), rel=1e-8, abs=1e-9)


@pytest.mark.parametrize("seed", range(12))
def test_v_1_matches_primal_lp(seed):
    model = make_one_period_model(100 + seed)
    assert criterion(model, 1).v == pytest.approx(primal_value_lp(model, 1), rel=1e-8, abs=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_v_2_matches_conic_primal(seed):
    model = make_one_period_model(200 + seed)
    assert criterion(model, 2).v == pytest.approx(p2_primal_cvxpy(model), rel=1e-6)


def test_zero_floor_atom():
    model = model_of((0.5, [1.0, -1.0], [0.3, 0.7], [0.0, 0.0]), (0.5, [2.0, -1.0], [0.5, 0.5], [1.0, 1.0]))
    rep = criterion(model, INF)
    assert rep.support[0] == 0.0 and rep.support[1] > 0
    dens = construct_density(model)
    assert dens.g[0].tolist() == [0.0, 0.0]


# -- densities -----------------------------------------------------------------

def test_density_of_centred_model_is_floor():
    dens = construct_density(binomial((2.0, 2.0)))
    assert dens.phi[0].tolist() == [0.0, 0.0]
    assert dens.g[0].tolist() == [2.0, 2.0]
    assert min_norm_density(binomial(), 2).value == 0.0


def test_two_point_density_uses_negative_outcome_only():
    d2, d1, q2 = 2.0, -0.5, 0.6
    model = model_of((1.0, [d2, d1], [q2, 1 - q2], [1.0, 1.0]))
    a = a_vector(model, 0)[0]
    assert a > 0
    dens = construct_density(model)
    assert dens.phi[0][0] == 0.0
    assert dens.phi[0][1] * (1 - q2) == pytest.approx(a / abs(d1), rel=1e-12)
    assert dens.nu[0] == pytest.approx(a / abs(d1), rel=1e-12)


@pytest.mark.parametrize("p", [1, 2, INF])
@pytest.mark.parametrize("seed", range(8))
def test_density_certificate(seed, p):
    model = make_one_period_model(300 + seed)
    dens = construct_density(model, p)
    assert dens.max_residual <= 1e-9
    assert dens.floor_margin >= -1e-9
    if p == INF:
        np.testing.assert_allclose(dens.excess, dens.nu, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("p", [1, 2, INF])
@pytest.mark.parametrize("seed", range(10))
def test_min_norm_equals_v(seed, p):
    model = make_one_period_model(400 + seed)
    v = criterion(model, p).v
    m = min_norm_density(model, conjugate(p))
    assert abs(m.value - v) <= 1e-7 * max(1.0, v)


# -- primal strategies --------------------------------------------------------

def test_attainment_zero_case():
    rep = criterion(binomial(), INF)
    att = primal_attainment(binomial(), INF, rep)
    assert not att.gamma.any() and att.achieved == 0.0 and att.bound_ok


@pytest.mark.parametrize("p", [1, 2, INF])
def test_two_point_attainment_matches_closed_form(p):
    probs = [0.2, 0.3, 0.5]
    model = model_of(*[(pr, [2.0 + k, -1.0 - 0.5 * k], [0.4, 0.6], [1.0 + k, 1.5]) for k, pr in enumerate(probs)])
    rep = criterion(model, p)
    s = []
    for atom in model.atoms:
        (d2,), (d1,) = atom.distribution.points
        a = float(atom.distribution.weights @ (atom.floor * atom.distribution.points[:, 0]))
        pos, neg = (0.4 * d2 ** p if p != INF else d2), (0.6 * abs(d1) ** p if p != INF else abs(d1))
        if p != INF:
            pos, neg = pos ** (1 / p), neg ** (1 / p)
        s.append(max(a, 0) / neg + max(-a, 0) / pos)
    q = conjugate(p)
    v = max(s) if q == INF else (np.array(probs) @ np.array(s) ** q) ** (1 / q)
    att = primal_attainment(model, p, rep)
    assert att.achieved == pytest.approx(v, rel=1e-6)
    assert att.loss_norm == pytest.approx(1.0, rel=1e-6)


@pytest.mark.parametrize("p", [1, 2, INF])
@pytest.mark.parametrize("seed", range(6))
def test_attainment_random(seed, p):
    model = make_one_period_model(500 + seed)
    rep = criterion(model, p)
    att = primal_attainment(model, p, rep)
    assert att.achieved == pytest.approx(rep.v, abs=1e-6 * max(1, rep.v))
    if rep.v > 0:
        assert att.loss_norm == pytest.approx(1.0, abs=1e-9 if p != 2 else 1e-6)
    assert att.bound_ok and att.max_sampled <= rep.v + 1e-6


# -- properties ----------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([1, 2, INF]), st.floats(0.1, 10.0))
def test_scaling(seed, p, lam):
    model = make_one_period_model(seed)
    scaled = OnePeriodModel([Atom(a.probability, a.distribution, lam * a.floor) for a in model.atoms])
    r1, r2 = criterion(model, p), criterion(scaled, p)
    np.testing.assert_allclose(r2.a, lam * r1.a, atol=1e-12)
    np.testing.assert_allclose(r2.support, lam * r1.support, rtol=1e-6, atol=1e-10)
    assert r2.v == pytest.approx(lam * r1.v, rel=1e-6, abs=1e-10)
    if p == INF:
        d1, d2 = construct_density(model), construct_density(scaled)
        np.testing.assert_allclose(d2.nu, lam * d1.nu, rtol=1e-9, atol=1e-12)
    for j, atom in enumerate(model.atoms):
        if r1.support[j] > 1e-8:
            # the scaled maximizer attains the unscaled support value
            h = r2.maximizers[j]
            assert psi(atom.distribution, h, p) <= 1 + 1e-6
            assert r1.a[j] @ h == pytest.approx(r1.support[j], rel=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_nonnegative_gains_are_null(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    n = int(rng.integers(2, 7))
    dist = DiscreteDistribution(make_increments(rng, d, n), rng.dirichlet(np.ones(n)))
    B = span(dist)
    C = B.coordinates(dist.points)
    for _ in range(3):
        u = rng.normal(size=B.rank)
        # max (u, c) over c with (c, x_i) >= 0, |c|_inf <= 1
        prog = LinearProgram(cost=u, objective_sense="max",
                             inequality_matrix=np.vstack([-C, np.eye(B.rank), -np.eye(B.rank)]),
                             inequality_rhs=np.concatenate([np.zeros(len(C)), np.ones(2 * B.rank)]),
                             variable_lower_bounds=np.full(B.rank, -np.inf))
        sol = solve_lp(prog)
        assert sol.status == OPTIMAL
        assert np.abs(sol.primal).max() <= 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([1, 2, INF]))
def test_gain_bounded_by_density_distance(seed, p):
    rng = np.random.default_rng(seed)
    model = make_one_period_model(rng)
    q = conjugate(p)
    base = min_norm_density(model, q)
    for _ in range(10):
        # any g >= f with E(g xi | H) = 0: add multiples of positive martingale weights
        phi = []
        for atom, ph in zip(model.atoms, base.phi):
            theta = origin_in_relative_interior(atom.distribution).witness
            phi.append(ph + rng.exponential() * theta / atom.distribution.weights)
        dist_norm = _weighted_norm(model, phi, q)
        gamma = [span(a.distribution).vectors.T @ rng.normal(size=span(a.distribution).rank)
                 for a in model.atoms]
        x = [a.distribution.points @ g for a, g in zip(model.atoms, gamma)]
        loss = _weighted_norm(model, [np.maximum(-xi, 0) for xi in x], p)
        gain = sum(a.probability * (a.distribution.weights * a.floor) @ xi for a, xi in zip(model.atoms, x))
        assert gain <= dist_norm * loss + 1e-9 * (1 + dist_norm * loss)


def _weighted_norm(model, vals, r):
    if r == INF:
        return max(float(np.abs(v).max()) for v in vals)
    tot = sum(a.probability * a.distribution.weights @ np.abs(v) ** r for a, v in zip(model.atoms, vals))
    return float(tot ** (1 / r))
