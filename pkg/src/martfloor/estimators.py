"""Estimator-style wrappers and input validation helpers.

The estimators follow the scikit-learn conventions that make sense for
model objects: constructor arguments are hyperparameters (``get_params`` /
``set_params``), ``fit`` stores results in trailing-underscore attributes,
and ``transform`` returns the constructed density.  Inputs are market
models rather than sample matrices, so there is no ``predict``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._tolerances import DEFAULT_TOL, Tolerances
from .exceptions import InputError
from .market import (AdaptedValues, OnePeriodModel, ScenarioTree, conditional_expectation, load_tree,
                     one_period_view, tree_from_dict)
from .multi_period import backward_beta, construct_emm, primal_gain_lp, verify_certificate
from .one_period import construct_density, criterion


def check_tolerances(tol_feas=None, tol_dual=None, tol_gauge=None) -> Tolerances:
    vals = {"feas": tol_feas, "dual": tol_dual, "gauge": tol_gauge}
    for name, v in vals.items():
        if v is not None and (not np.isfinite(v) or v <= 0):
            raise InputError(f"tol_{name} must be a positive number")
    kw = {k: float(v) for k, v in vals.items() if v is not None}
    return Tolerances(**{**DEFAULT_TOL.__dict__, **kw})


def check_p(p) -> float:
    if isinstance(p, str):
        p = p.strip().lower()
        p = np.inf if p in ("inf", "infinity") else p
    try:
        p = float(p)
    except (TypeError, ValueError):
        raise InputError(f"p must be 1, 2 or inf, got {p!r}") from None
    if p not in (1.0, 2.0, np.inf):
        raise InputError(f"p must be 1, 2 or inf, got {p!r}")
    return p


def check_tree(X, tol: Tolerances = DEFAULT_TOL) -> ScenarioTree:
    """Accept a tree, a tree document (dict) or a path to a tree file."""
    if isinstance(X, ScenarioTree):
        return X
    if isinstance(X, dict):
        return tree_from_dict(X, tol)
    if isinstance(X, (str, Path)):
        return load_tree(X, tol)
    raise InputError(f"cannot interpret {type(X).__name__} as a scenario tree")


def check_model(X, tol: Tolerances = DEFAULT_TOL) -> OnePeriodModel:
    """Accept a one-period model or anything :func:`check_tree` takes with horizon 1."""
    if isinstance(X, OnePeriodModel):
        return X
    tree = check_tree(X, tol)
    if tree.horizon != 1:
        raise InputError(f"a one-period model needs horizon 1, the tree has horizon {tree.horizon}")
    return one_period_view(tree, 0, tol=tol)


def parse_floor(spec, tree: ScenarioTree) -> AdaptedValues:
    """Leaf floor from ``const:<x>``, ``file:<path>`` (JSON leaf id -> value) or a mapping."""
    leaves = tree.leaves
    if spec is None:
        return tree.floor_values()
    if isinstance(spec, AdaptedValues):
        return spec
    if isinstance(spec, dict):
        mapping = spec
    elif isinstance(spec, str) and spec.startswith("const:"):
        try:
            x = float(spec[len("const:"):])
        except ValueError:
            raise InputError(f"bad floor constant in {spec!r}") from None
        if not np.isfinite(x) or x <= 0:
            raise InputError("the floor constant must be positive")
        return AdaptedValues(tree.horizon, leaves, np.full(len(leaves), x))
    elif isinstance(spec, str) and spec.startswith("file:"):
        path = Path(spec[len("file:"):])
        try:
            mapping = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read floor file {path}: {exc}") from None
        if not isinstance(mapping, dict):
            raise InputError("floor file must hold an object mapping leaf id to value")
    else:
        raise InputError(f"floor must be const:<x> or file:<path>, got {spec!r}")
    try:
        mapping = {int(k): float(v) for k, v in mapping.items()}
    except (TypeError, ValueError):
        raise InputError("floor keys must be leaf ids and values numbers") from None
    extra = set(mapping) - set(map(int, leaves))
    if extra:
        raise InputError(f"floor given for non-leaf nodes {sorted(extra)}")
    values = AdaptedValues.from_mapping(tree, tree.horizon, mapping)
    if np.any(values.values <= 0) or not np.all(np.isfinite(values.values)):
        raise InputError("floor values must be positive")
    return values


def floor_at(tree: ScenarioTree, f: AdaptedValues, depth: int) -> AdaptedValues:
    """E(f | F_depth) by repeated one-step conditioning."""
    while f.depth > depth:
        f = conditional_expectation(tree, f)
    return f


class FloorCriterion(TransformerMixin, BaseEstimator):
    """One-period criterion v_p with a density g >= f certifying it.

    ``fit`` accepts a :class:`OnePeriodModel` or a horizon-1 tree.
    """

    def __init__(self, p=np.inf, tol_feas=DEFAULT_TOL.feas, tol_dual=DEFAULT_TOL.dual):
        self.p = p
        self.tol_feas = tol_feas
        self.tol_dual = tol_dual

    def _tol(self):
        return check_tolerances(self.tol_feas, self.tol_dual)

    def fit(self, X, y=None):
        tol = self._tol()
        model = check_model(X, tol)
        self.p_ = check_p(self.p)
        self.report_ = criterion(model, self.p_, tol)
        self.value_ = self.report_.v
        self.support_ = self.report_.support
        self.a_ = self.report_.a
        self.n_atoms_ = len(model.atoms)
        return self

    def transform(self, X):
        """Density g per atom (list of arrays, one value per support point)."""
        check_is_fitted(self, "report_")
        tol = self._tol()
        return construct_density(check_model(X, tol), self.p_, tol).g


class MartingaleMeasure(TransformerMixin, BaseEstimator):
    """Multi-period recursion and martingale density cZ with Z >= f.

    ``fit`` accepts a tree (object, document or path); the floor comes from
    the tree unless ``floor`` is given (``const:<x>``, ``file:<path>`` or a
    mapping).
    """

    def __init__(self, floor=None, tol_feas=DEFAULT_TOL.feas, tol_dual=DEFAULT_TOL.dual):
        self.floor = floor
        self.tol_feas = tol_feas
        self.tol_dual = tol_dual

    def fit(self, X, y=None):
        tol = check_tolerances(self.tol_feas, self.tol_dual)
        tree = check_tree(X, tol)
        f = parse_floor(self.floor, tree)
        self.tree_ = tree
        self.beta_ = backward_beta(tree, f, tol)
        self.certificate_ = construct_emm(tree, f, self.beta_, tol)
        self.verification_ = verify_certificate(tree, self.certificate_, f, tol)
        self.expected_beta0_ = self.beta_.expected_beta0
        self.value_ = self.expected_beta0_ - float(tree.path_prob[f.nodes] @ f.values)
        return self

    def transform(self, X):
        """Normalized density cZ on the leaves of ``X``, the tree seen by ``fit``."""
        check_is_fitted(self, "certificate_")
        if check_tree(X) != self.tree_:
            raise InputError("transform expects the tree the estimator was fitted on")
        return self.certificate_.density

    def primal_value(self):
        """Expected-gain LP value, an independent route to ``value_``."""
        check_is_fitted(self, "tree_")
        tol = check_tolerances(self.tol_feas, self.tol_dual)
        return primal_gain_lp(self.tree_, parse_floor(self.floor, self.tree_), tol).value
