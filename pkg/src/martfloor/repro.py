"""Finite truncations of the countable worked examples, with closed forms.

Each generator returns the engine input (a model or a tree) and a
:class:`ClosedFormTable` of the values the closed-form derivations predict,
so the two can be compared entry by entry.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ._tolerances import DEFAULT_TOL, Tolerances
from .exceptions import InputError, SolverError
from .geometry import DiscreteDistribution
from .market import Atom, OnePeriodModel, ScenarioTree
from .one_period import criterion, primal_value_lp
from .optim import OPTIMAL, LinearProgram, solve_lp


@dataclass(frozen=True)
class TableEntry:
    value: object
    formula: str


@dataclass
class ClosedFormTable:
    """Named closed-form values; every entry records the formula it came from."""

    entries: Dict[str, TableEntry] = field(default_factory=dict)

    def add(self, name, value, formula):
        self.entries[name] = TableEntry(value, formula)

    def __getitem__(self, name):
        return self.entries[name].value

    def __contains__(self, name):
        return name in self.entries

    def formula(self, name) -> str:
        return self.entries[name].formula

    def to_dict(self):
        def plain(v):
            return v.tolist() if isinstance(v, np.ndarray) else v
        return {k: {"value": plain(e.value), "formula": e.formula} for k, e in self.entries.items()}


# -- two sub-atoms per atom ------------------------------------------------------

def gen_example_52(J: int, xi_values, f_values, probs):
    """One-period model over atoms A_0^j = A_1^{2j-1} + A_1^{2j}, j <= J.

    ``xi_values``, ``f_values`` and ``probs`` give xi, f and P on the 2J
    sub-atoms in order A_1^1, A_1^2, ...; xi must be positive on odd and
    negative on even sub-atoms.  If the probabilities sum to less than 1 the
    rest goes to an inert atom with xi = 0 and f = 1.
    """
    xi, f, P = (np.asarray(v, dtype=float).reshape(-1) for v in (xi_values, f_values, probs))
    if J < 1 or not (xi.size == f.size == P.size == 2 * J):
        raise InputError("need 2J values of xi, f and probabilities")
    if np.any(xi[0::2] <= 0) or np.any(xi[1::2] >= 0):
        raise InputError("xi must be > 0 on odd and < 0 on even sub-atoms")
    if np.any(P <= 0) or np.any(f < 0):
        raise InputError("probabilities must be positive and f nonnegative")
    total = P.sum()
    if total > 1 + DEFAULT_TOL.feas:
        raise InputError(f"probabilities sum to {total:.12g} > 1")
    up, dn = slice(0, None, 2), slice(1, None, 2)
    P0 = P[up] + P[dn]
    atoms = [Atom(float(P0[j]), DiscreteDistribution(np.array([[xi[2 * j]], [xi[2 * j + 1]]]),
                                                     np.array([P[2 * j], P[2 * j + 1]]) / P0[j]),
                  f[2 * j:2 * j + 2].copy())
             for j in range(J)]
    rest = 1.0 - total
    if rest > DEFAULT_TOL.feas:
        atoms.append(Atom(rest, DiscreteDistribution(np.zeros((1, 1)), np.ones(1)), np.ones(1)))
    elif rest > 0:
        # rounding only; fold it into the last atom
        last = atoms[-1]
        atoms[-1] = Atom(last.probability + rest, last.distribution, last.floor)

    rho = np.empty(2 * J)
    rho[up] = f[dn] * np.abs(xi[dn] / xi[up]) * P[dn] / P[up]
    rho[dn] = f[up] * np.abs(xi[up] / xi[dn]) * P[up] / P[dn]
    excess = np.maximum(rho - f, 0.0)
    table = ClosedFormTable()
    table.add("rho", rho, "rho on A_1^{2j-1} = f^{2j}|xi^{2j}/xi^{2j-1}| P^{2j}/P^{2j-1}; "
                          "on A_1^{2j} = f^{2j-1}|xi^{2j-1}/xi^{2j}| P^{2j-1}/P^{2j}")
    table.add("E_rho_partial", np.cumsum(rho[up] * P[up] + rho[dn] * P[dn]), "sum_{j<=J} E(rho I_{A_0^j})")
    for name, p in (("s_T_1", 1), ("s_T_2", 2), ("s_T_inf", np.inf)):
        e = 1.0 if p == np.inf else 1.0 - 1.0 / p
        s = (excess[dn] * P[dn] ** e + excess[up] * P[up] ** e) / P0 ** e
        table.add(name, s, f"s(a|T_p) per atom = [(rho-f)^+ P^(1-1/p) on both sub-atoms] / P(A_0^j)^(1-1/p), p={p}")
    table.add("nu", table["s_T_inf"], "mu(-a|[delta_1, delta_2]) per atom = E((rho-f)^+ | A_0^j)")
    for name, q in (("excess_norm_1", 1), ("excess_norm_2", 2)):
        table.add(name, np.cumsum(excess[up] ** q * P[up] + excess[dn] ** q * P[dn]) ** (1.0 / q),
                  f"partial sums of ||(rho - f)^+||_q, q={q}")
    table.add("excess_norm_inf", np.maximum.accumulate(np.maximum(excess[up], excess[dn])),
              "running max of (rho - f)^+")
    return OnePeriodModel(atoms), table


def example_53_first_period(J: int):
    """xi, f, P of the first period of the two-period example, for :func:`gen_example_52`."""
    j = np.arange(1, J + 1)
    xi = np.ravel(np.column_stack([np.ones(J), -2.0 ** -j]))
    P = np.ravel(np.column_stack([2.0 ** (-2 * j + 1), 2.0 ** (-2 * j)]))
    return xi, np.ones(2 * J), P


# -- two-period tree ---------------------------------------------------------------

def gen_example_53(J: int):
    """Two-period tree over blocks A_0^j, j <= J, plus an inert tail of mass 4^-J.

    Node layout: depth-0 ids ``0..J-1`` are the blocks, id ``J`` the tail;
    then the depth-1 nodes A_1^1, A_1^2, ... (two per block) and the tail's
    child; then depth 2 in the same order.  f = 1 everywhere.  Block roots
    sit at price -1 so that every increment survives the round trip through
    price levels exactly.
    """
    if J < 1:
        raise InputError("J must be >= 1")
    parent: List[int] = []
    prob: List[float] = []
    price: List[float] = []
    for j in range(1, J + 1):
        parent.append(-1)
        prob.append(3.0 / 4.0 ** j)
        price.append(-1.0)
    tail = J
    parent.append(-1)
    prob.append(4.0 ** -J)
    price.append(0.0)

    first = []  # (node id, k) for A_1^k
    for j in range(1, J + 1):
        for k, (q, x) in ((2 * j - 1, (2 / 3, 1.0)), (2 * j, (1 / 3, -2.0 ** -j))):
            first.append((len(parent), k))
            parent.append(j - 1)
            prob.append(q)
            price.append(-1.0 + x)
    tail1 = len(parent)
    parent.append(tail)
    prob.append(1.0)
    price.append(0.0)
    for node, k in first:
        for q, x in ((0.5, 1.0), (0.5, -2.0 ** (-k / 2))):
            parent.append(node)
            prob.append(q)
            price.append(price[node] + x)
    parent.append(tail1)
    prob.append(1.0)
    price.append(0.0)
    tree = ScenarioTree(d=1, horizon=2, parent=parent, prob=prob, price=np.array(price).reshape(-1, 1))

    j = np.arange(1, J + 1, dtype=float)
    k = np.arange(1, 2 * J + 1, dtype=float)
    a1 = (1 - 2.0 ** (-k / 2)) / 2
    beta1 = (2.0 ** (k / 2) + 1) / 2
    a0 = (2.0 ** (j - 0.5) + 0.5 - 2.0 ** (-j - 1)) / 3
    nu0 = 2.0 ** j * a0
    P0 = 3.0 / 4.0 ** j
    P1 = 2.0 ** -k
    table = ClosedFormTable()
    table.add("a1", a1, "a_1 on A_1^k = (1 - 2^(-k/2)) / 2")
    table.add("nu1", 2.0 ** (k / 2) * a1, "mu(-a_1|conv) on A_1^k = 2^(k/2) a_1")
    table.add("beta1", beta1, "beta_1 on A_1^k = (2^(k/2) + 1) / 2")
    table.add("a0", a0, "a_0 on A_0^j = (2^(j-1/2) + 1/2 - 2^(-j-1)) / 3")
    table.add("nu0", nu0, "mu(-a_0|conv) on A_0^j = 2^j a_0^j")
    table.add("nu0_term", nu0 * P0, "2^j a_0^j P(A_0^j) = 2^-j (2^(j-1/2) + 1/2 - 2^(-j-1))")
    table.add("E_nu0_partial", np.cumsum(nu0 * P0), "sum_{j<=J} 2^j a_0^j P(A_0^j)")
    table.add("E_beta1_partial", np.cumsum(beta1 * P1), "sum_{k<=2J} P(A_1^k) (2^(k/2) + 1) / 2")
    table.add("E_rho1_partial", np.cumsum(2.0 ** (-3 * j) + 2.0 ** (1 - j)), "sum_{j<=J} (2^-3j + 2^(1-j))")
    table.add("E_rho2_partial", np.cumsum(2.0 ** (-1.5 * k - 1) + 2.0 ** (-k / 2 - 1)),
              "sum_{j<=2J} (2^-(3j/2+1) + 2^-(j/2+1))")
    table.add("aggressive_E_gain", np.cumsum(2.0 ** -j + 2.0 ** -0.5 * (1 + 2.0 ** -j) - 2.0 ** (1 - 2 * j)),
              "sum_{j<=J} [2^-j + 2^(-1/2)(1 + 2^-j) - 2^(1-2j)]")
    table.add("tail_mass", 4.0 ** -J, "1 - sum_{j<=J} 3/4^j")
    return tree, table


# -- countable family of assets ----------------------------------------------------------

@dataclass(frozen=True)
class Example54:
    """Raw outcome arrays of the truncated model (one row per outcome)."""

    labels: List[str]
    xi: np.ndarray  # (outcomes, J)
    Q: np.ndarray
    zeta: np.ndarray
    P: np.ndarray
    M: int


def _example_54_outcomes(J, M):
    labels, xi, Q, zeta, P = [], [], [], [], []
    for w in range(1, 2 * M + 1):
        k = (w + 1) // 2
        q = 2.0 ** (-k - 1)
        row = np.zeros(J)
        if w % 2 == 0:
            row[:min(J, w // 2)] = -1.0  # w in A_j iff w >= 2j
            z = 0.75
        elif (w - 1) % 4 == 0:
            i = (w - 1) // 4 + 1  # w in B_{i-1}
            if i <= J:
                row[i - 1] = 2.0 ** i
            z = 2.0 ** (i - 1)
        else:
            z = 0.75  # w in B'
        labels.append(str(w))
        xi.append(row)
        Q.append(q)
        zeta.append(z)
        P.append(z * q)
    # even points beyond 2M lie in every A_j, j <= J
    labels.append(f"even>{2 * M}")
    xi.append(-np.ones(J))
    Q.append(2.0 ** (-M - 1))
    zeta.append(0.75)
    P.append(0.75 * 2.0 ** (-M - 1))
    # odd points beyond 2M carry no asset j <= J; zeta mixes the B and B' values
    i0 = -(-M // 2)  # first i with 4i + 1 > 2M
    i1 = -(-(M + 1) // 2)  # first i with 4i - 1 > 2M
    p_odd = 2.0 ** (-i0 - 1) + 0.5 * 4.0 ** -i1
    q_odd = 2.0 ** (-M - 1)
    labels.append(f"odd>{2 * M}")
    xi.append(np.zeros(J))
    Q.append(q_odd)
    zeta.append(p_odd / q_odd)
    P.append(p_odd)
    return Example54(labels, np.array(xi), np.array(Q), np.array(zeta), np.array(P), M)


def gen_example_54(J: int, M: Optional[int] = None):
    """J assets xi^j = 2^j I_{B_{j-1}} - I_{A_j} on the points 1..2M plus two tail outcomes.

    The tails carry the exact remaining Q-mass 2^-(M+1) each, so the
    identities E_Q xi^j = 0 and E_Q zeta = 1 hold exactly for j <= J.
    Requires M >= 2J.
    """
    if J < 1:
        raise InputError("J must be >= 1")
    M = 4 * J if M is None else int(M)
    if M < 2 * J:
        raise InputError(f"M = {M} < 2J = {2 * J}: the even tail would not lie in every A_j")
    raw = _example_54_outcomes(J, M)
    dist, _, _ = DiscreteDistribution.from_outcomes(raw.xi, raw.P, values=np.ones(len(raw.P)))
    model = OnePeriodModel([Atom(1.0, dist, np.ones(dist.size))])
    j = np.arange(1, J + 1, dtype=float)
    table = ClosedFormTable()
    table.add("E_P_xi", 0.5 - 0.75 * 2.0 ** -j, "E_Q(zeta xi^j) = 1/2 - (3/4) 2^-j")
    table.add("Q_A", 2.0 ** -j, "Q(A_j) = 2^-j")
    table.add("Q_B", 2.0 ** (-2 * j), "Q(B_{j-1}) = 2^-2j")
    table.add("v_bound", 0.75, "E G <= 1/2 + (3/4) sum 2^-2j = 3/4")
    table.add("raw", raw, "outcome arrays: xi, Q, zeta, P = zeta Q")
    return model, table


@dataclass(frozen=True)
class CounterexampleRow:
    J: int
    v_inf: float
    c_star: float
    density: np.ndarray  # maximizing g per raw outcome
    mass_in_A: np.ndarray  # E_P(g I_{A_j}), j <= J
    mass_bound: np.ndarray  # c 2^j P(B_{j-1})
    z_residual: float  # max_j |E_P(zeta^-1 xi^j)|


@dataclass(frozen=True)
class CounterexampleReport:
    M: int
    rows: List[CounterexampleRow]

    @property
    def c_star(self):
        return np.array([r.c_star for r in self.rows])

    @property
    def v_inf(self):
        return np.array([r.v_inf for r in self.rows])


def max_floor_density(P, xi, tol: Tolerances = DEFAULT_TOL):
    """max c s.t. g >= c, E_P(g xi) = 0, E_P g = 1; returns (c, g).

    Solved in the masses h = P g, which stay in [0, 1] even where g is huge
    on a tiny outcome.
    """
    P = np.asarray(P, dtype=float)
    n = len(P)
    A_eq = np.zeros((xi.shape[1] + 1, n + 1))
    A_eq[:-1, :n] = xi.T
    A_eq[-1, :n] = 1.0
    b_eq = np.zeros(xi.shape[1] + 1)
    b_eq[-1] = 1.0
    A_ub = np.hstack([-np.eye(n), P[:, None]])  # c P_i - h_i <= 0
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    sol = solve_lp(LinearProgram(cost=cost, objective_sense="max", equality_matrix=A_eq, equality_rhs=b_eq,
                                 inequality_matrix=A_ub, inequality_rhs=np.zeros(n),
                                 variable_lower_bounds=np.concatenate([np.zeros(n), [-np.inf]])), tol)
    if sol.status != OPTIMAL:
        raise SolverError(f"max-floor LP returned {sol.status}")
    return float(sol.primal[-1]), sol.primal[:n] / P


def validate_counterexample(J_list: Sequence[int], M: Optional[int] = None,
                            tol: Tolerances = DEFAULT_TOL) -> CounterexampleReport:
    """For each J: v_inf, the best uniform density floor c*_J and the mass check.

    All J share one outcome space (M = 4 max J by default) so the constraint
    sets are nested and c*_J is comparable across J.
    """
    J_list = [int(J) for J in J_list]
    M = 4 * max(J_list) if M is None else int(M)
    rows = []
    for J in J_list:
        model, table = gen_example_54(J, M)
        raw = table["raw"]
        v = criterion(model, np.inf, tol).v
        c, g = max_floor_density(raw.P, raw.xi, tol)
        inA = raw.xi < 0
        mass = (raw.P * g) @ inA
        bound = c * 2.0 ** np.arange(1, J + 1) * raw.P[[4 * (j - 1) for j in range(1, J + 1)]]
        zres = float(np.abs((raw.P / raw.zeta) @ raw.xi).max())
        rows.append(CounterexampleRow(J=J, v_inf=v, c_star=c, density=g, mass_in_A=mass,
                                      mass_bound=bound, z_residual=zres))
    return CounterexampleReport(M=M, rows=rows)


def example_54_primal_value(J: int, M: Optional[int] = None, tol: Tolerances = DEFAULT_TOL) -> float:
    """v_inf of the J-asset model through the direct primal LP."""
    model, _ = gen_example_54(J, M)
    return primal_value_lp(model, np.inf, tol)
