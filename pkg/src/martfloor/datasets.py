"""Random arbitrage-free models for tests and benchmarks."""
from __future__ import annotations

import numpy as np

from .geometry import DiscreteDistribution
from .market import Atom, OnePeriodModel, ScenarioTree


def _check_random_state(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def make_increments(rng, d, n, full_rank=False, return_weights=False):
    """n distinct points in R^d whose hull holds 0 in its relative interior.

    Points are drawn in a random subspace and shifted so that a random
    strictly positive convex combination of them vanishes.
    """
    rng = _check_random_state(rng)
    k = d if full_rank else int(rng.integers(1, d + 1))
    basis = np.linalg.qr(rng.normal(size=(d, d)))[0][:, :k]
    pts = rng.normal(size=(n, k))
    theta = rng.dirichlet(np.ones(n))
    pts = (pts - theta @ pts) @ basis.T
    return (pts, theta) if return_weights else pts


def make_one_period_model(random_state=None, d=None, max_atoms=4, max_outcomes=6,
                          floor_range=(0.5, 2.0)) -> OnePeriodModel:
    rng = _check_random_state(random_state)
    d = d or int(rng.integers(1, 4))
    n_atoms = int(rng.integers(1, max_atoms + 1))
    probs = rng.dirichlet(np.ones(n_atoms))
    atoms = []
    for p in probs:
        n = int(rng.integers(2, max_outcomes + 1))
        dist = DiscreteDistribution(make_increments(rng, d, n), rng.dirichlet(np.ones(n)))
        atoms.append(Atom(float(p), dist, rng.uniform(*floor_range, size=n)))
    return OnePeriodModel(atoms)


def make_tree(random_state=None, horizon=None, d=None, max_children=3, floor_range=(0.5, 2.0),
              martingale=False) -> ScenarioTree:
    """Random arbitrage-free tree with a single root.

    With ``martingale=True`` the transition probabilities are the positive
    weights that make every increment mean zero.
    """
    rng = _check_random_state(random_state)
    horizon = horizon or int(rng.integers(1, 4))
    d = d or int(rng.integers(1, 3))
    parent, prob, price = [-1], [1.0], [rng.normal(size=d)]
    frontier = [0]
    for _ in range(horizon):
        nxt = []
        for node in frontier:
            n = int(rng.integers(2, max_children + 1)) if max_children >= 2 else 1
            inc, theta = make_increments(rng, d, n, return_weights=True)
            w = theta if martingale else rng.dirichlet(np.ones(n))
            for x, q in zip(inc, w):
                parent.append(node)
                prob.append(float(q))
                price.append(price[node] + x)
                nxt.append(len(parent) - 1)
        frontier = nxt
    floor = {i: float(rng.uniform(*floor_range)) for i in frontier}
    return ScenarioTree(d=d, horizon=horizon, parent=parent, prob=prob, price=np.array(price), floor=floor)

