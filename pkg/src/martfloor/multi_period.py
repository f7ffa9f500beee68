"""Multi-period criterion and explicit martingale measure (p = inf).

The backward recursion

    beta_N = f,
    a_n    = E(beta_{n+1} Delta S_{n+1} | F_n),
    beta_n = E(beta_{n+1} | F_n) + mu(-a_n | conv support of Delta S_{n+1} given F_n)

is finite at every node of a finite arbitrage-free tree, and E beta_0 - E f
is the value of the expected-gain problem with terminal loss at most 1.
The moment-LP witnesses of each gauge give a martingale density
c Z = c f prod z_n with Z >= f.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._tolerances import DEFAULT_TOL, Tolerances
from .exceptions import InputError, NAViolationError, SolverError
from .geometry import minkowski_gauge, origin_in_relative_interior, span
from .market import AdaptedValues, ScenarioTree, increments_distribution, node_increments
from .optim import OPTIMAL, UNBOUNDED, LinearProgram, solve_lp


@dataclass(frozen=True)
class NACheck:
    holds: bool
    node: Optional[int] = None  # first violating node
    separator: Optional[np.ndarray] = None


def check_na(tree: ScenarioTree, tol: Tolerances = DEFAULT_TOL) -> NACheck:
    """Per-node test that 0 lies in the relative interior of the increment hull."""
    for node in range(tree.n_nodes):
        if tree.is_leaf(node):
            continue
        r = origin_in_relative_interior(increments_distribution(tree, node, tol), tol)
        if not r.holds:
            return NACheck(False, node, r.separator)
    return NACheck(True)


def _require_na(tree, tol):
    chk = check_na(tree, tol)
    if not chk.holds:
        raise NAViolationError(f"node {chk.node}: origin is not in the relative interior "
                               f"of the increment hull", location=chk.node, separator=chk.separator)


def _leaf_floor(tree, f):
    if f is None:
        f = tree.floor_values()
    elif not isinstance(f, AdaptedValues):
        f = AdaptedValues.from_mapping(tree, tree.horizon, f)
    if f.depth != tree.horizon or set(map(int, f.nodes)) != set(map(int, tree.leaves)):
        raise InputError("floor values must cover exactly the leaves")
    if np.any(f.values <= 0):
        raise InputError("the floor must be strictly positive on every leaf")
    return f


def _per_depth(tree, arr, n):
    nodes = tree.nodes_at(n)
    return AdaptedValues(n, nodes, arr[nodes])


@dataclass(frozen=True)
class BetaSequence:
    """Node-indexed output of the backward recursion.

    ``a`` and ``nu`` are zero on leaves; ``zeta`` holds the moment-LP
    density phi of the parent evaluated at each node's increment (zero on
    depth-0 nodes).
    """

    tree: ScenarioTree
    beta: np.ndarray
    a: np.ndarray  # (n_nodes, d)
    nu: np.ndarray
    zeta: np.ndarray
    expected_beta0: float

    def beta_at(self, n) -> AdaptedValues:
        return _per_depth(self.tree, self.beta, n)

    def a_at(self, n) -> AdaptedValues:
        return _per_depth(self.tree, self.a, n)

    def nu_at(self, n) -> AdaptedValues:
        return _per_depth(self.tree, self.nu, n)


def backward_beta(tree: ScenarioTree, f=None, tol: Tolerances = DEFAULT_TOL) -> BetaSequence:
    """Run the recursion from the leaves to the roots.

    ``f`` defaults to the tree's floor; it must be positive on every leaf.
    Raises :class:`NAViolationError` at the first node without no-arbitrage.
    """
    f = _leaf_floor(tree, f)
    _require_na(tree, tol)
    n_nodes = tree.n_nodes
    beta = np.zeros(n_nodes)
    a = np.zeros((n_nodes, tree.d))
    nu = np.zeros(n_nodes)
    zeta = np.zeros(n_nodes)
    beta[f.nodes] = f.values
    for n in range(tree.horizon - 1, -1, -1):
        for node in tree.nodes_at(n):
            ch = list(tree.children(node))
            pr = tree.prob[ch]
            inc = tree.price[ch] - tree.price[node]
            a_n = (pr * beta[ch]) @ inc
            dist, index = node_increments(tree, node, tol)
            g = minkowski_gauge(-a_n, dist, tol)
            phi = g.witness / dist.weights
            a[node] = a_n
            nu[node] = g.value
            zeta[ch] = phi[index]
            beta[node] = pr @ beta[ch] + g.value
    roots = tree.nodes_at(0)
    eb0 = float(tree.prob[roots] @ beta[roots])
    return BetaSequence(tree=tree, beta=beta, a=a, nu=nu, zeta=zeta, expected_beta0=eb0)


@dataclass(frozen=True)
class DensityCertificate:
    """Martingale density cZ on the leaves together with its ingredients."""

    Z: AdaptedValues  # unnormalized, on the leaves
    c: float  # 1 / E Z
    zeta: np.ndarray  # per node
    z: np.ndarray  # per node, 1 on depth-0 nodes
    martingale_residual: np.ndarray  # per node max |E_Q(Delta S | node)|, 0 on leaves
    floor_margin: float  # min over leaves of cZ - c f
    expected_Z: float
    expected_beta0: float
    tower_residual: float  # max |E(z_{n+1} ... z_N f | node) - beta_n|
    eps_zero: bool = True

    @property
    def density(self) -> AdaptedValues:
        return AdaptedValues(self.Z.depth, self.Z.nodes, self.c * self.Z.values)

    @property
    def max_residual(self):
        return float(self.martingale_residual.max(initial=0.0))


def _tail_products(tree, z, f_leaf):
    """E(z_{n+1} ... z_N f | node) for every node."""
    w = np.zeros(tree.n_nodes)
    w[f_leaf.nodes] = f_leaf.values
    for n in range(tree.horizon - 1, -1, -1):
        for node in tree.nodes_at(n):
            ch = list(tree.children(node))
            w[node] = tree.prob[ch] @ (z[ch] * w[ch])
    return w


def _martingale_residuals(tree, q_leaf):
    """max |E_Q(Delta S_{n+1} | node)| per non-leaf node for leaf masses ``q_leaf``."""
    mass = np.zeros(tree.n_nodes)
    mass[tree.leaves] = q_leaf
    for n in range(tree.horizon - 1, -1, -1):
        for node in tree.nodes_at(n):
            mass[node] = mass[list(tree.children(node))].sum()
    res = np.zeros(tree.n_nodes)
    for node in range(tree.n_nodes):
        if tree.is_leaf(node) or mass[node] <= 0:
            continue
        ch = list(tree.children(node))
        drift = (mass[ch] @ (tree.price[ch] - tree.price[node])) / mass[node]
        res[node] = float(np.abs(drift).max())
    return res


def construct_emm(tree: ScenarioTree, f=None, beta: Optional[BetaSequence] = None,
                  tol: Tolerances = DEFAULT_TOL) -> DensityCertificate:
    """Density dQ/dP = cZ with Z = f prod_n (1 + zeta_n / beta_n).

    The moment LPs are solved to optimality, so no slack factor appears and
    Z >= f holds pointwise.
    """
    f = _leaf_floor(tree, f)
    if beta is None:
        beta = backward_beta(tree, f, tol)
    z = np.ones(tree.n_nodes)
    deep = tree.depth > 0
    z[deep] = 1.0 + beta.zeta[deep] / beta.beta[deep]
    leaves = tree.leaves
    Z = np.array([f[int(leaf)] * np.prod(z[tree.path(leaf)]) for leaf in leaves])
    EZ = float(tree.path_prob[leaves] @ Z)
    c = 1.0 / EZ
    tower = _tail_products(tree, z, f)
    inner = ~np.isin(np.arange(tree.n_nodes), leaves)
    tower_res = float(np.abs(tower[inner] - beta.beta[inner]).max(initial=0.0))
    return DensityCertificate(
        Z=AdaptedValues(tree.horizon, leaves, Z), c=c, zeta=beta.zeta.copy(), z=z,
        martingale_residual=_martingale_residuals(tree, tree.path_prob[leaves] * c * Z),
        floor_margin=float(np.min(c * Z - c * f.values)), expected_Z=EZ,
        expected_beta0=beta.expected_beta0, tower_residual=tower_res)


@dataclass(frozen=True)
class CertificateReport:
    normalization_error: float  # |sum P cZ - 1|
    max_martingale_residual: float
    worst_node: Optional[int]
    floor_margin: float  # min cZ - c f
    min_ratio: float  # min Z / f
    tower_residual: float
    expected_Z_gap: float  # |E Z - E beta_0|
    passed: bool


def verify_certificate(tree: ScenarioTree, cert: DensityCertificate, f=None,
                       tol: Tolerances = DEFAULT_TOL) -> CertificateReport:
    """Recheck a certificate against the tree without reusing solver output.

    Only ``Z``, ``c`` and ``z`` are read from the certificate; beta is
    recomputed from the tree.
    """
    f = _leaf_floor(tree, f)
    leaves = tree.leaves
    if (cert.Z.values.shape != (len(leaves),) or not np.array_equal(np.sort(cert.Z.nodes), np.sort(leaves))
            or cert.z.shape != (tree.n_nodes,)):
        raise InputError("certificate does not match the tree")
    order = {int(n): i for i, n in enumerate(cert.Z.nodes)}
    Z = np.array([cert.Z.values[order[int(leaf)]] for leaf in leaves])
    fv = np.array([f[int(leaf)] for leaf in leaves])
    P = tree.path_prob[leaves]
    norm_err = abs(float(P @ (cert.c * Z)) - 1.0)
    res = _martingale_residuals(tree, P * cert.c * Z)
    worst = int(np.argmax(res)) if res.size and res.max() > 0 else None
    margin = float(np.min(cert.c * (Z - fv)))
    ratio = float(np.min(Z / fv))
    beta = backward_beta(tree, f, tol)
    tower = _tail_products(tree, cert.z, f)
    inner = ~np.isin(np.arange(tree.n_nodes), leaves)
    tower_res = float(np.abs(tower[inner] - beta.beta[inner]).max(initial=0.0))
    ez_gap = abs(float(P @ Z) - beta.expected_beta0)
    scale = 1.0 + beta.expected_beta0
    ok = (norm_err <= tol.feas * 10 and float(res.max(initial=0.0)) <= tol.feas * scale
          and margin >= -tol.feas and ratio >= 1.0 - tol.feas
          and tower_res <= tol.feas * scale and ez_gap <= tol.feas * scale)
    return CertificateReport(normalization_error=norm_err, max_martingale_residual=float(res.max(initial=0.0)),
                             worst_node=worst, floor_margin=margin, min_ratio=ratio,
                             tower_residual=tower_res, expected_Z_gap=ez_gap, passed=bool(ok))


@dataclass(frozen=True)
class PrimalGain:
    value: float
    gamma: np.ndarray  # (n_nodes, d) position held over the period after each node
    gains: AdaptedValues  # terminal gain per leaf


def primal_gain_lp(tree: ScenarioTree, f=None, tol: Tolerances = DEFAULT_TOL) -> PrimalGain:
    """max E(f G_N) over predictable strategies with G_N >= -1 at every leaf.

    Positions at each node are restricted to the span of its increments.
    An unbounded problem means arbitrage and raises :class:`NAViolationError`.
    """
    f = _leaf_floor(tree, f)
    inner = [node for node in range(tree.n_nodes) if not tree.is_leaf(node)]
    bases, offs, k = {}, {}, 0
    for node in inner:
        B = span(increments_distribution(tree, node, tol), tol)
        bases[node], offs[node] = B, k
        k += B.rank
    leaves = tree.leaves
    G = np.zeros((len(leaves), k))  # leaf gain = G @ coordinates
    for row, leaf in enumerate(leaves):
        path = tree.path(leaf)
        for u, v in zip(path[:-1], path[1:]):
            B = bases[u]
            G[row, offs[u]:offs[u] + B.rank] = B.coordinates(tree.price[v] - tree.price[u])
    P = tree.path_prob[leaves]
    fv = np.array([f[int(leaf)] for leaf in leaves])
    if k == 0:
        return PrimalGain(0.0, np.zeros((tree.n_nodes, tree.d)), AdaptedValues(tree.horizon, leaves, np.zeros(len(leaves))))
    # Rescale so that tiny atoms do not fall below the simplex tolerances:
    # columns hold positions times node probability (costs become conditional
    # expectations), rows are multiplied by the probability of the leaf's parent.
    col = np.zeros(k)
    for node in inner:
        col[offs[node]:offs[node] + bases[node].rank] = tree.path_prob[node]
    row = tree.path_prob[tree.parent[leaves]]
    Gs = G / col[None, :] * row[:, None]
    cost = (P * fv) @ G / col
    sol = solve_lp(LinearProgram(cost=cost, objective_sense="max", inequality_matrix=-Gs,
                                 inequality_rhs=row, variable_lower_bounds=np.full(k, -np.inf)), tol)
    if sol.status == UNBOUNDED:
        raise NAViolationError("expected gain is unbounded: the tree admits arbitrage")
    if sol.status != OPTIMAL:
        raise SolverError(f"expected-gain LP returned {sol.status}")
    x = sol.primal / col
    gamma = np.zeros((tree.n_nodes, tree.d))
    for node in inner:
        B = bases[node]
        gamma[node] = B.vectors.T @ x[offs[node]:offs[node] + B.rank]
    return PrimalGain(float((P * fv) @ (G @ x)), gamma, AdaptedValues(tree.horizon, leaves, G @ x))


@dataclass(frozen=True)
class AggressiveStrategy:
    gamma: np.ndarray  # (n_nodes, 1)
    gains: AdaptedValues
    E_gain: float
    min_gain: float


def aggressive_strategy(tree: ScenarioTree, J: int, tol: float = 1e-12) -> AggressiveStrategy:
    """Buy the largest position with terminal loss at most 1, block by block.

    Expects the two-period tree of :func:`martfloor.repro.gen_example_53`:
    depth-0 nodes ``0..J-1`` are the blocks j = 1..J (an optional extra
    root carries the remaining mass and does not trade).  Block j holds
    2^j over the first period and, after the up move, 2^(j-1/2) (2^j + 1)
    over the second.
    """
    roots = list(tree.nodes_at(0))
    if tree.d != 1 or tree.horizon != 2 or len(roots) < J:
        raise InputError("tree does not have the two-period block shape")
    gamma = np.zeros((tree.n_nodes, 1))
    for j in range(1, J + 1):
        root = roots[j - 1]
        ch = tree.children(root)
        if len(ch) != 2:
            raise InputError(f"block {j}: expected two first-period children")
        up, down = ch
        moves = tree.price[[up, down], 0] - tree.price[root, 0]
        if abs(moves[0] - 1.0) > tol or abs(moves[1] + 2.0 ** -j) > tol:
            raise InputError(f"block {j}: first-period moves {moves} do not match the block shape")
        gc = tree.children(up)
        second = tree.price[list(gc), 0] - tree.price[up, 0]
        if len(gc) != 2 or abs(second[0] - 1.0) > tol or abs(second[1] + 2.0 ** (-(2 * j - 1) / 2)) > tol:
            raise InputError(f"block {j}: second-period moves do not match the block shape")
        gamma[root] = 2.0 ** j
        gamma[up] = 2.0 ** (j - 0.5) * (2.0 ** j + 1)
    leaves = tree.leaves
    gains = np.array([sum(gamma[u, 0] * (tree.price[v, 0] - tree.price[u, 0])
                          for u, v in zip(tree.path(leaf)[:-1], tree.path(leaf)[1:])) for leaf in leaves])
    P = tree.path_prob[leaves]
    return AggressiveStrategy(gamma=gamma, gains=AdaptedValues(2, leaves, gains),
                              E_gain=float(P @ gains), min_gain=float(gains.min()))
