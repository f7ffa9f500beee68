import json

import numpy as np
import pytest

from martfloor.exceptions import InputError
from martfloor.market import lq_norm, one_period_view, tree_from_dict, validate_tree_dict
from martfloor.multi_period import backward_beta, check_na
from martfloor.one_period import construct_density, criterion, min_norm_density
from martfloor.repro import (ClosedFormTable, example_53_first_period, example_54_primal_value,
                             gen_example_52, gen_example_53, gen_example_54, max_floor_density,
                             validate_counterexample)


def brute_force_54(J, M, K=400):
    """Q, zeta, xi on the points 1..2K directly from the definitions."""
    w = np.arange(1, 2 * K + 1)
    Q = 2.0 ** (-((w + 1) // 2) - 1)
    zeta = np.where(w % 2 == 0, 0.75, np.where((w - 1) % 4 == 0, 2.0 ** ((w - 1) // 4), 0.75))
    xi = np.zeros((w.size, J))
    for j in range(1, J + 1):
        xi[w == 4 * (j - 1) + 1, j - 1] = 2.0 ** j
        xi[(w % 2 == 0) & (w >= 2 * j), j - 1] = -1.0
    return w, Q, zeta, xi


# -- table -------------------------------------------------------------------------

def test_table_entries_carry_formulas():
    t = ClosedFormTable()
    t.add("x", np.array([1.0, 2.0]), "x = 1, 2")
    assert "x" in t and t.formula("x") == "x = 1, 2"
    assert json.loads(json.dumps(t.to_dict()))["x"]["value"] == [1.0, 2.0]


# -- two sub-atoms per atom ------------------------------------------------------------

def test_first_period_rho():
    J = 6
    model, table = gen_example_52(J, *example_53_first_period(J))
    j = np.arange(1, J + 1)
    np.testing.assert_allclose(table["rho"][0::2], 2.0 ** (-j - 1), rtol=1e-15)
    np.testing.assert_allclose(table["rho"][1::2], 2.0 ** (j + 1), rtol=1e-15)
    np.testing.assert_allclose(table["E_rho_partial"], np.cumsum(2.0 ** (-3 * j) + 2.0 ** (1 - j)), rtol=1e-14)
    assert table["E_rho_partial"][-1] < 1 / 7 + 2
    assert len(model.atoms) == J + 1  # inert tail
    assert model.atoms[-1].probability == pytest.approx(4.0 ** -J)


def test_rho_partial_sums_converge():
    sums = gen_example_52(30, *example_53_first_period(30))[1]["E_rho_partial"]
    assert sums[-1] - sums[19] < 1e-5
    assert sums[-1] == pytest.approx(1 / 7 + 2, abs=1e-8)


@pytest.mark.parametrize("p,key", [(1, "s_T_1"), (2, "s_T_2"), (np.inf, "s_T_inf")])
def test_table_matches_engine(p, key):
    rng = np.random.default_rng(7)
    J = 5
    xi = np.ravel(np.column_stack([rng.uniform(0.2, 3, J), -rng.uniform(0.2, 3, J)]))
    f = rng.uniform(0.5, 2, 2 * J)
    P = rng.dirichlet(np.ones(2 * J)) * 0.9
    model, table = gen_example_52(J, xi, f, P)
    rep = criterion(model, p)
    np.testing.assert_allclose(rep.support[:J], table[key], rtol=1e-9, atol=1e-12)
    if p == np.inf:
        dens = construct_density(model)
        np.testing.assert_allclose(dens.nu[:J], table["nu"], rtol=1e-9, atol=1e-12)
        assert dens.excess.sum() == pytest.approx(dens.nu.sum())
    # v_p equals the excess norm ||(rho - f)^+||_q (tail atom contributes nothing)
    q = {1: np.inf, 2: 2, np.inf: 1}[p]
    expected = {np.inf: "excess_norm_inf", 2: "excess_norm_2", 1: "excess_norm_1"}[q]
    assert rep.v == pytest.approx(table[expected][-1], rel=1e-9)


def test_symmetric_case_has_zero_value():
    J = 3
    xi = np.tile([1.0, -1.0], J)
    P = np.full(2 * J, 1 / (2 * J))
    model, table = gen_example_52(J, xi, np.ones(2 * J), P)
    np.testing.assert_allclose(table["rho"], 1.0)
    assert min_norm_density(model, 1).value == 0.0


def test_sign_pattern_enforced():
    with pytest.raises(InputError):
        gen_example_52(1, [-1.0, 1.0], [1, 1], [0.5, 0.5])


def test_first_period_density_total_excess():
    J = 8
    model, table = gen_example_52(J, *example_53_first_period(J))
    dens = construct_density(model)
    probs = model.probabilities
    assert probs[:J] @ dens.excess[:J] == pytest.approx(probs[:J] @ table["nu"], rel=1e-12)
    assert lq_norm(np.concatenate(dens.g), 1, np.concatenate(
        [a.probability * a.distribution.weights for a in model.atoms])) < np.inf


# -- two-period tree ---------------------------------------------------------------

def test_block_tree_validates_and_round_trips():
    tree, _ = gen_example_53(6)
    assert validate_tree_dict(tree.to_dict()) == []
    assert tree_from_dict(json.loads(json.dumps(tree.to_dict()))) == tree
    assert check_na(tree).holds


def test_block_tree_beta1_example():
    tree, table = gen_example_53(4)
    assert table["beta1"][3] == 2.5
    b = backward_beta(tree)
    assert b.beta[tree.nodes_at(1)[3]] == pytest.approx(2.5, rel=1e-15)


def test_block_tree_expected_beta1_bounded():
    sums = gen_example_53(40)[1]["E_beta1_partial"]
    assert sums[-1] - sums[39] < 1e-5
    assert np.all(np.diff(sums) > 0)


def test_block_tree_expected_nu0_partial_sums():
    table = gen_example_53(40)[1]
    sums = table["E_nu0_partial"]
    for J in range(20, 41):
        assert sums[J - 1] > 0.7 * J
    np.testing.assert_allclose(table["nu0_term"],
                               2.0 ** -np.arange(1, 41) * (2.0 ** (np.arange(1, 41) - 0.5) + 0.5
                                                           - 2.0 ** (-np.arange(1, 41) - 1)), rtol=1e-14)


def test_block_tree_slices_match_single_period_tables():
    J = 10
    tree, table = gen_example_53(J)
    first = criterion(one_period_view(tree, 0), np.inf)
    second = criterion(one_period_view(tree, 1), np.inf)
    _, t52 = gen_example_52(J, *example_53_first_period(J))
    np.testing.assert_allclose(first.support[:J], t52["nu"], rtol=1e-12)
    np.testing.assert_allclose(second.support[:2 * J], table["nu1"], rtol=1e-12)


# -- countable family of assets --------------------------------------------------------

@pytest.mark.parametrize("J,M", [(1, 2), (3, 6), (3, 12), (5, 20), (10, 40)])
def test_truncation_matches_brute_force(J, M):
    model, table = gen_example_54(J, M)
    raw = table["raw"]
    w, Q, zeta, xi = brute_force_54(J, M)
    n = 2 * M
    np.testing.assert_array_equal(raw.Q[:n], Q[:n])
    np.testing.assert_array_equal(raw.zeta[:n], zeta[:n])
    np.testing.assert_array_equal(raw.xi[:n], xi[:n])
    even_tail = (w > n) & (w % 2 == 0)
    odd_tail = (w > n) & (w % 2 == 1)
    assert raw.Q[n] == pytest.approx(Q[even_tail].sum(), rel=1e-12)
    assert raw.Q[n + 1] == pytest.approx(Q[odd_tail].sum(), rel=1e-12)
    assert raw.P[n + 1] == pytest.approx((Q * zeta)[odd_tail].sum(), rel=1e-12)
    assert np.all(xi[even_tail] == -1) and np.all(xi[odd_tail] == 0)


@pytest.mark.parametrize("J", [1, 2, 5, 10])
def test_truncation_identities_exact(J):
    model, table = gen_example_54(J)
    raw = table["raw"]
    assert raw.Q.sum() == 1.0
    assert raw.P.sum() == 1.0
    assert np.all(raw.Q @ raw.xi == 0.0)
    np.testing.assert_allclose(raw.P @ raw.xi, table["E_P_xi"], rtol=1e-15)
    np.testing.assert_allclose(raw.Q @ (raw.xi < 0), table["Q_A"], rtol=1e-15)
    if J >= 2:
        assert table["E_P_xi"][1] == 0.3125
    assert check_na(_as_tree(model)).holds


def _as_tree(model):
    from martfloor.market import model_to_tree
    return model_to_tree(model)


def test_short_truncation_rejected():
    with pytest.raises(InputError):
        gen_example_54(3, M=5)


@pytest.mark.parametrize("J", [1, 3, 6, 10])
def test_example_54_value_bound(J):
    assert example_54_primal_value(J) <= 0.75 + 1e-9
    assert criterion(gen_example_54(J)[0], np.inf).v == pytest.approx(example_54_primal_value(J), rel=1e-9)


def test_counterexample_report():
    rep = validate_counterexample(range(1, 11))
    c = rep.c_star
    assert c[0] == pytest.approx(8 / 9, rel=1e-12)
    assert c[1] == pytest.approx(32 / 45, rel=1e-12)
    assert np.all(np.diff(c) <= 1e-12)
    assert np.all(rep.v_inf <= 0.75 + 1e-9)
    for row in rep.rows:
        assert row.z_residual <= 1e-12
        assert np.all(row.mass_in_A >= row.mass_bound - 1e-12)
        np.testing.assert_allclose(row.mass_bound, row.c_star / 2, rtol=1e-12)


def test_max_floor_density_is_feasible():
    _, table = gen_example_54(4, 16)
    raw = table["raw"]
    c, g = max_floor_density(raw.P, raw.xi)
    assert raw.P @ g == pytest.approx(1.0)
    assert np.abs((raw.P * g) @ raw.xi).max() <= 1e-12
    assert g.min() >= c - 1e-12
