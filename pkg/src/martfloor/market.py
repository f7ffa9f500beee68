"""Finite filtered market models.

A :class:`ScenarioTree` stores one node per atom of each F_n.  Depth-0
nodes carry the unconditional probabilities of the atoms of F_0 (a single
root with probability 1 when F_0 is trivial); every other node carries its
transition probability from the parent.

Tree file format (JSON)::

    {"d": 1, "horizon": 1,
     "nodes": [{"id": 0, "parent": null, "prob": 1.0, "price": [0.0]},
               {"id": 1, "parent": 0, "prob": 0.5, "price": [1.0]},
               {"id": 2, "parent": 0, "prob": 0.5, "price": [-1.0]}],
     "floor": {"1": 1.0, "2": 1.0}}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ._tolerances import DEFAULT_TOL, Tolerances
from .exceptions import InputError, TreeValidationError
from .geometry import DiscreteDistribution

_TOP_KEYS = {"d", "horizon", "nodes", "floor"}
_NODE_KEYS = {"id", "parent", "prob", "price"}


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    d: int
    horizon: int
    parent: np.ndarray  # -1 for depth-0 nodes
    prob: np.ndarray
    price: np.ndarray  # (n_nodes, d)
    floor: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=int)
        prob = np.asarray(self.prob, dtype=float)
        price = np.asarray(self.price, dtype=float).reshape(len(parent), self.d)
        depth = np.zeros(len(parent), dtype=int)
        children: List[List[int]] = [[] for _ in parent]
        for i, p in enumerate(parent):
            if p >= 0:
                depth[i] = depth[p] + 1
                children[p].append(i)
        path = prob.copy()
        for i, p in enumerate(parent):
            if p >= 0:
                path[i] = path[p] * prob[i]
        for arr in (parent, prob, price, depth, path):
            arr.setflags(write=False)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "price", price)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "path_prob", path)
        object.__setattr__(self, "_children", tuple(tuple(c) for c in children))
        object.__setattr__(self, "floor", {int(k): float(v) for k, v in self.floor.items()})

    @property
    def n_nodes(self):
        return len(self.parent)

    def children(self, node):
        return self._children[node]

    def is_leaf(self, node):
        return not self._children[node]

    def nodes_at(self, depth):
        return np.nonzero(self.depth == depth)[0]

    @property
    def leaves(self):
        return self.nodes_at(self.horizon)

    def floor_values(self):
        """Floor f on the leaves (default 1) as :class:`AdaptedValues`."""
        leaves = self.leaves
        return AdaptedValues(self.horizon, leaves,
                             np.array([self.floor.get(int(i), 1.0) for i in leaves]))

    def path(self, node):
        out = [int(node)]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out[::-1]

    def to_dict(self):
        nodes = [{"id": i, "parent": None if p < 0 else int(p), "prob": float(pr),
                  "price": [float(v) for v in s]}
                 for i, (p, pr, s) in enumerate(zip(self.parent, self.prob, self.price))]
        out = {"d": self.d, "horizon": self.horizon, "nodes": nodes}
        if self.floor:
            out["floor"] = {str(k): v for k, v in sorted(self.floor.items())}
        return out

    def __eq__(self, other):
        if not isinstance(other, ScenarioTree):
            return NotImplemented
        return (self.d == other.d and self.horizon == other.horizon
                and np.array_equal(self.parent, other.parent)
                and np.array_equal(self.prob, other.prob)
                and np.array_equal(self.price, other.price)
                and self.floor == other.floor)


@dataclass(frozen=True)
class AdaptedValues:
    """Node-indexed values on one depth level (scalars or vectors)."""

    depth: int
    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=int)
        values = np.asarray(self.values, dtype=float)
        if values.shape[0] != nodes.shape[0]:
            raise InputError("one value per node is required")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    def __getitem__(self, node):
        idx = np.nonzero(self.nodes == node)[0]
        if idx.size == 0:
            raise KeyError(node)
        return self.values[idx[0]]

    def as_dict(self):
        return {int(n): v for n, v in zip(self.nodes, self.values)}

    @classmethod
    def from_mapping(cls, tree: ScenarioTree, depth: int, mapping) -> "AdaptedValues":
        nodes = tree.nodes_at(depth)
        missing = [int(n) for n in nodes if int(n) not in mapping]
        if missing:
            raise InputError(f"missing values for depth-{depth} nodes {missing}")
        return cls(depth, nodes, np.array([mapping[int(n)] for n in nodes], dtype=float))


@dataclass(frozen=True)
class Atom:
    probability: float
    distribution: DiscreteDistribution
    floor: np.ndarray  # one value per support point


@dataclass(frozen=True)
class OnePeriodModel:
    atoms: Sequence[Atom]

    def __post_init__(self):
        atoms = tuple(self.atoms)
        if not atoms:
            raise InputError("a model needs at least one atom")
        total = sum(a.probability for a in atoms)
        if any(a.probability <= 0 for a in atoms) or abs(total - 1.0) > DEFAULT_TOL.feas:
            raise InputError(f"atom probabilities must be positive and sum to 1 (got {total:.12g})")
        dims = {a.distribution.dim for a in atoms}
        if len(dims) != 1:
            raise InputError("all atoms must share the dimension")
        for a in atoms:
            f = np.asarray(a.floor, dtype=float)
            if f.shape != (a.distribution.size,) or np.any(f < 0):
                raise InputError("floor needs one nonnegative value per support point")
        object.__setattr__(self, "atoms", atoms)

    @property
    def dim(self):
        return self.atoms[0].distribution.dim

    @property
    def probabilities(self):
        return np.array([a.probability for a in self.atoms])


# -- validation and I/O -------------------------------------------------------

def validate_tree_dict(data, tol: Tolerances = DEFAULT_TOL) -> List[str]:
    """Every violation found in a tree document (empty list if valid)."""
    errs = []
    if not isinstance(data, dict):
        return ["top level must be a JSON object"]
    unknown = set(data) - _TOP_KEYS
    if unknown:
        errs.append(f"unknown top-level keys {sorted(unknown)}")
    missing = [key for key in ("d", "horizon", "nodes") if key not in data]
    if missing:
        return errs + [f"missing key '{key}'" for key in missing]
    d, horizon, nodes = data["d"], data["horizon"], data["nodes"]
    shape = []
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        shape.append("'d' must be a positive integer")
    if not isinstance(horizon, int) or isinstance(horizon, bool) or horizon < 1:
        shape.append("'horizon' must be a positive integer")
    if not isinstance(nodes, list) or not nodes:
        shape.append("'nodes' must be a non-empty array")
    if shape:
        return errs + shape

    depth = {}
    kids: Dict[int, List[int]] = {}
    probs = {}
    for pos, node in enumerate(nodes):
        if not isinstance(node, dict):
            errs.append(f"nodes[{pos}] is not an object")
            continue
        unknown = set(node) - _NODE_KEYS
        if unknown:
            errs.append(f"nodes[{pos}]: unknown keys {sorted(unknown)}")
        missing = _NODE_KEYS - set(node)
        if missing:
            errs.append(f"nodes[{pos}]: missing keys {sorted(missing)}")
            continue
        nid, par, pr, price = node["id"], node["parent"], node["prob"], node["price"]
        if nid != pos:
            errs.append(f"nodes[{pos}]: id {nid!r} must equal its position {pos}")
            continue
        if par is not None and (not isinstance(par, int) or par not in depth):
            errs.append(f"node {nid}: parent {par!r} must be null or the id of an earlier node")
            continue
        if not isinstance(pr, (int, float)) or isinstance(pr, bool) or not np.isfinite(pr) or pr <= 0 or pr > 1:
            errs.append(f"node {nid}: nonpositive or invalid probability {pr!r}")
            pr = np.nan
        if (not isinstance(price, list) or len(price) != d
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v) for v in price)):
            errs.append(f"node {nid}: price must be an array of {d} finite numbers")
        depth[nid] = 0 if par is None else depth[par] + 1
        probs[nid] = pr
        kids.setdefault(nid, [])
        if par is not None:
            kids[par].append(nid)
        if depth[nid] > horizon:
            errs.append(f"node {nid}: depth {depth[nid]} exceeds horizon {horizon}")

    roots = [i for i in depth if depth[i] == 0]
    s = sum(probs[i] for i in roots)
    if roots and abs(s - 1.0) > tol.feas:
        errs.append(f"depth-0 nodes: probability sum {s:g} ≠ 1")
    for nid, ch in kids.items():
        if ch:
            s = sum(probs[c] for c in ch)
            if abs(s - 1.0) > tol.feas:
                errs.append(f"node {nid}: probability sum {s:g} ≠ 1")
        elif depth[nid] != horizon:
            errs.append(f"node {nid}: leaf at depth {depth[nid]}, expected {horizon}")

    floor = data.get("floor", {})
    if not isinstance(floor, dict):
        errs.append("'floor' must be an object mapping leaf id to a positive number")
    else:
        for k, v in floor.items():
            try:
                leaf = int(k)
            except (TypeError, ValueError):
                errs.append(f"floor key {k!r} is not a node id")
                continue
            if leaf not in depth or kids.get(leaf):
                errs.append(f"floor key {k!r} is not a leaf")
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not np.isfinite(v) or v <= 0:
                errs.append(f"floor for leaf {k}: nonpositive or invalid value {v!r}")
    return errs


def tree_from_dict(data, tol: Tolerances = DEFAULT_TOL) -> ScenarioTree:
    errs = validate_tree_dict(data, tol)
    if errs:
        raise TreeValidationError(errs)
    nodes = data["nodes"]
    parent = [-1 if n["parent"] is None else n["parent"] for n in nodes]
    return ScenarioTree(d=data["d"], horizon=data["horizon"], parent=parent,
                        prob=[n["prob"] for n in nodes], price=[n["price"] for n in nodes],
                        floor={int(k): v for k, v in data.get("floor", {}).items()})


def load_tree(path, tol: Tolerances = DEFAULT_TOL) -> ScenarioTree:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TreeValidationError([f"parse error: {exc}"]) from exc
    return tree_from_dict(data, tol)


def save_tree(tree: ScenarioTree, path):
    Path(path).write_text(json.dumps(tree.to_dict(), indent=1))


def model_to_tree(model: OnePeriodModel) -> ScenarioTree:
    """Write a one-period model as a horizon-1 tree (root price 0, child price = increment)."""
    d = model.dim
    parent, prob, price, floor = [], [], [], {}
    for atom in model.atoms:
        parent.append(-1)
        prob.append(atom.probability)
        price.append(np.zeros(d))
    for k, atom in enumerate(model.atoms):
        for x, q, f in zip(atom.distribution.points, atom.distribution.weights, atom.floor):
            floor[len(parent)] = float(f)
            parent.append(k)
            prob.append(q)
            price.append(x)
    return ScenarioTree(d=d, horizon=1, parent=parent, prob=prob, price=price, floor=floor)


# -- conditional structure ------------------------------------------------------

def node_increments(tree: ScenarioTree, node, tol: Tolerances = DEFAULT_TOL):
    """Increment distribution at ``node`` plus the child -> support-point map."""
    ch = tree.children(node)
    if not ch:
        raise InputError(f"node {node} is a leaf")
    inc = tree.price[list(ch)] - tree.price[node]
    dist, _, index = DiscreteDistribution.from_outcomes(inc, tree.prob[list(ch)],
                                                        values=np.zeros(len(ch)), tol=tol)
    return dist, index


def increments_distribution(tree: ScenarioTree, node, tol: Tolerances = DEFAULT_TOL) -> DiscreteDistribution:
    """Conditional law of S_child - S_node; coincident increments are merged."""
    return node_increments(tree, node, tol)[0]


def conditional_expectation(tree: ScenarioTree, values: AdaptedValues) -> AdaptedValues:
    """E(values | F_{n}) for values given on depth n + 1."""
    if values.depth < 1:
        raise InputError("values must live on depth >= 1")
    lookup = {int(n): i for i, n in enumerate(values.nodes)}
    nodes = tree.nodes_at(values.depth - 1)
    out = []
    for node in nodes:
        ch = tree.children(node)
        try:
            v = np.stack([values.values[lookup[c]] for c in ch])
        except KeyError as exc:
            raise InputError(f"missing value for node {exc.args[0]}") from None
        out.append(tree.prob[list(ch)] @ v)
    return AdaptedValues(values.depth - 1, nodes, np.array(out))


def one_period_view(tree: ScenarioTree, n: int, values=None, tol: Tolerances = DEFAULT_TOL) -> OnePeriodModel:
    """Slice the tree into the one-period model (F_n, Delta S_{n+1}).

    ``values`` are the floor values on depth ``n + 1`` (mapping or
    :class:`AdaptedValues`); by default E(f | F_{n+1}).  Children with equal
    increments are merged and their floors averaged with the transition
    weights, i.e. the floor becomes E(f | F_n v sigma(Delta S_{n+1})).
    """
    if not 0 <= n < tree.horizon:
        raise InputError(f"depth {n} out of range [0, {tree.horizon})")
    if values is None:
        values = tree.floor_values()
        while values.depth > n + 1:
            values = conditional_expectation(tree, values)
    elif not isinstance(values, AdaptedValues):
        values = AdaptedValues.from_mapping(tree, n + 1, values)
    vals = values.as_dict()
    atoms = []
    for node in tree.nodes_at(n):
        ch = list(tree.children(node))
        missing = [c for c in ch if c not in vals]
        if missing:
            raise InputError(f"missing floor values for nodes {missing}")
        inc = tree.price[ch] - tree.price[node]
        dist, floor, _ = DiscreteDistribution.from_outcomes(inc, tree.prob[ch],
                                                            values=[vals[c] for c in ch], tol=tol)
        atoms.append(Atom(float(tree.path_prob[node]), dist, floor))
    return OnePeriodModel(atoms)


def lq_norm(values, q, weights=None, tree: Optional[ScenarioTree] = None) -> float:
    """(sum_k P_k |v_k|^q)^(1/q); q = inf gives max |v_k| (all atoms carry mass)."""
    if isinstance(values, AdaptedValues):
        if weights is None:
            if tree is None:
                raise InputError("weights or tree required")
            weights = tree.path_prob[values.nodes]
        values = values.values
    v = np.abs(np.asarray(values, dtype=float).reshape(-1))
    w = np.asarray(weights, dtype=float).reshape(-1)
    if q < 1:
        raise InputError("q must be >= 1")
    if q == np.inf:
        return float(v.max()) if v.size else 0.0
    if q == 1:
        return float(w @ v)
    return float((w @ v ** q) ** (1.0 / q))
