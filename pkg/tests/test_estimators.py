import json

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from martfloor.datasets import make_one_period_model, make_tree
from martfloor.estimators import (FloorCriterion, MartingaleMeasure, check_model, check_p, check_tolerances,
                                  check_tree, parse_floor)
from martfloor.exceptions import InputError, TreeValidationError
from martfloor.market import model_to_tree, save_tree
from martfloor.multi_period import backward_beta
from martfloor.one_period import criterion


def test_params_round_trip():
    est = FloorCriterion(p=2, tol_feas=1e-8)
    assert est.get_params() == {"p": 2, "tol_feas": 1e-8, "tol_dual": 1e-7}
    twin = clone(est).set_params(p="inf")
    assert twin.p == "inf" and est.p == 2


def test_unfitted_transform_raises():
    with pytest.raises(NotFittedError):
        FloorCriterion().transform(make_one_period_model(0))
    with pytest.raises(NotFittedError):
        MartingaleMeasure().transform(make_tree(0))


@pytest.mark.parametrize("p", [1, 2, np.inf])
def test_floor_criterion_matches_function(p):
    model = make_one_period_model(3)
    est = FloorCriterion(p=p).fit(model)
    rep = criterion(model, p)
    assert est.value_ == rep.v
    np.testing.assert_array_equal(est.support_, rep.support)
    g = est.transform(model)
    for atom, gj in zip(model.atoms, g):
        assert np.all(gj >= atom.floor - 1e-9)


def test_floor_criterion_accepts_tree_file(tmp_path):
    model = make_one_period_model(5)
    save_tree(model_to_tree(model), tmp_path / "m.json")
    est = FloorCriterion().fit(str(tmp_path / "m.json"))
    assert est.value_ == pytest.approx(criterion(model, np.inf).v, rel=1e-12)


def test_martingale_measure_value_and_density():
    tree = make_tree(2, horizon=3)
    est = MartingaleMeasure().fit(tree)
    b = backward_beta(tree)
    assert est.expected_beta0_ == b.expected_beta0
    assert est.verification_.passed
    dens = est.transform(tree)
    assert tree.path_prob[dens.nodes] @ dens.values == pytest.approx(1.0)
    assert est.primal_value() == pytest.approx(est.value_, rel=1e-8, abs=1e-8)
    with pytest.raises(InputError):
        est.transform(make_tree(3, horizon=2))


def test_martingale_measure_constant_floor_scales():
    tree = make_tree(6, horizon=2)
    one = MartingaleMeasure(floor="const:1").fit(tree)
    three = MartingaleMeasure(floor="const:3").fit(tree)
    assert three.expected_beta0_ == pytest.approx(3 * one.expected_beta0_, rel=1e-9)
    np.testing.assert_allclose(three.transform(tree).values, one.transform(tree).values, rtol=1e-9)


def test_floor_file(tmp_path):
    tree = make_tree(1, horizon=1, d=1)
    path = tmp_path / "f.json"
    path.write_text(json.dumps({str(int(n)): 2.0 for n in tree.leaves}))
    f = parse_floor(f"file:{path}", tree)
    np.testing.assert_array_equal(f.values, 2.0)


@pytest.mark.parametrize("spec", ["const:0", "const:-1", "const:x", "bogus", "file:/nonexistent/f.json"])
def test_bad_floor_specs(spec):
    with pytest.raises(InputError):
        parse_floor(spec, make_tree(1, horizon=1))


def test_floor_on_inner_node_rejected():
    tree = make_tree(1, horizon=2)
    with pytest.raises(InputError):
        parse_floor({0: 1.0}, tree)


def test_validation_helpers():
    assert check_p("inf") == np.inf and check_p(2) == 2.0
    with pytest.raises(InputError):
        check_p(3)
    assert check_tolerances(tol_feas=1e-6).feas == 1e-6
    with pytest.raises(InputError):
        check_tolerances(tol_dual=-1)
    with pytest.raises(InputError):
        check_tree(42)
    with pytest.raises(TreeValidationError):
        check_tree({"d": 1})
    with pytest.raises(InputError):
        check_model(make_tree(0, horizon=2))
