"""
Hierarchy of cycles
===================

Given transition exponents ``V[i, j]`` between attractors, the successor map
``N(i) = argmin_j V[i, j]`` groups states into cycles; cycles are grouped
again using aggregated exponents, until one node holds every state.

Aggregated exponents are tracked at state level. For an aggregate ``C`` and
an outside state ``y``

    W(C, y) = min_{x in C} [kappa_C(x) + V(x, y)],

where ``kappa_C(x) >= 0`` is the occupancy exponent of ``x`` inside ``C``
(``kappa_C(x) = kappa_C(c) + kappa_c(x)`` for the child ``c`` holding ``x``,
and ``kappa_C(c) = max_c' E(c') - E(c)``). The exit exponent is
``E(C) = min_y W(C, y)`` and the argmin is the exit target.

The matrix-exponential oracle computes the law of the Markov chain with rates
``exp(-V/eps)`` at time ``exp(lambda/eps)`` directly and is used to validate
the hierarchy.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NonGenericError", "ThresholdError", "TransitionExponents", "CycleNode", "Hierarchy",
    "MetastableProfile", "n_map", "build_hierarchy", "metastable_profile",
    "oracle_distribution", "generator_exp", "predict_linear_cauchy", "predict_nonlinear_cauchy",
    "NonlinearPrediction", "random_generic_v",
]

TIE_TOL = 1e-9


class NonGenericError(ValueError):
    """Raised when an argmin needed by the hierarchy is not unique."""

    def __init__(self, ties):
        self.ties = ties
        super().__init__(f"non-generic exponents, ties: {ties}")


class ThresholdError(ValueError):
    pass


@dataclass(frozen=True)
class TransitionExponents:
    V: np.ndarray

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        if V.ndim != 2 or V.shape[0] != V.shape[1]:
            raise ValueError("V must be a square matrix")
        off = ~np.eye(len(V), dtype=bool)
        if np.any(~np.isfinite(V[off])) or np.any(V[off] < 0):
            raise ValueError("off-diagonal exponents must be finite and nonnegative")
        np.fill_diagonal(V, 0.0)
        V.setflags(write=False)
        object.__setattr__(self, "V", V)

    @property
    def size(self):
        return len(self.V)

    @property
    def generic(self):
        try:
            build_hierarchy(self)
        except NonGenericError:
            return False
        return True


def _as_exponents(V):
    return V if isinstance(V, TransitionExponents) else TransitionExponents(np.asarray(V, float))


def _unique_argmin(values, labels, what, margin=0.0):
    order = np.argsort(values, kind="stable")
    best = order[0]
    tol = max(margin, TIE_TOL * max(1.0, abs(values[best])))
    if len(order) > 1 and values[order[1]] - values[best] <= tol:
        tied = [labels[k] for k in order if values[k] - values[best] <= tol]
        raise NonGenericError([(what, tied)])
    return best


def n_map(V) -> dict:
    """Successor map ``i -> argmin_{j != i} V[i, j]`` (0-based states)."""
    V = _as_exponents(V).V
    ell = len(V)
    if ell < 2:
        return {}
    out = {}
    ties = []
    for i in range(ell):
        js = [j for j in range(ell) if j != i]
        try:
            out[i] = js[_unique_argmin(V[i, js], js, i)]
        except NonGenericError as exc:
            ties.extend(exc.ties)
    if ties:
        raise NonGenericError(ties)
    return out


@dataclass
class CycleNode:
    id: int
    rank: int
    states: tuple
    children: tuple = ()
    successor: dict = field(default_factory=dict)
    E: float = math.inf
    exit_target: int | None = None
    main: int = 0
    kappa: dict = field(default_factory=dict)
    state_kappa: dict = field(default_factory=dict)
    parent: int | None = None

    def to_dict(self, nodes):
        return {
            "id": self.id, "rank": self.rank, "states": list(self.states),
            "exit_exponent": None if math.isinf(self.E) else self.E,
            "exit_target": self.exit_target, "main_state": self.main,
            "kappa": {str(k): v for k, v in self.kappa.items()},
            "successor": {str(k): v for k, v in self.successor.items()},
            "children": [nodes[c].to_dict(nodes) for c in self.children],
        }


@dataclass
class Hierarchy:
    V: np.ndarray
    nodes: list
    ranks: list  # ranks[k] = list of node ids at rank k
    root: int

    def leaf(self, i):
        return self.ranks[0][i]

    def chain(self, i):
        """Node ids containing state i, from the leaf up to the root."""
        out = [self.leaf(i)]
        while self.nodes[out[-1]].parent is not None:
            out.append(self.nodes[out[-1]].parent)
        return out

    def child_holding(self, node_id, state):
        for c in self.nodes[node_id].children:
            if state in self.nodes[c].states:
                return c
        raise KeyError(state)

    def exit_exponents(self):
        return sorted({n.E for n in self.nodes if math.isfinite(n.E)})

    def to_json(self):
        return json.dumps(self.nodes[self.root].to_dict(self.nodes), indent=2)


def _exit_data(V, states, kappa_x, margin=0.0):
    """W(C, y) minimised over outside y: returns (E, target state)."""
    ell = len(V)
    inside = np.zeros(ell, bool)
    inside[list(states)] = True
    outside = np.flatnonzero(~inside)
    if outside.size == 0:
        return math.inf, None
    xs = list(states)
    kap = np.array([kappa_x[x] for x in xs])
    W = np.min(kap[:, None] + V[np.ix_(xs, outside)], axis=0)
    k = _unique_argmin(W, list(outside), tuple(xs), margin)
    return float(W[k]), int(outside[k])


def build_hierarchy(V, margin: float = 0.0) -> Hierarchy:
    """Recursive aggregation of states into cycles of increasing rank.

    Every argmin must be unique; with ``margin > 0`` the runner-up must also
    be at least ``margin`` away (used to draw well-separated fixtures).
    """
    V = _as_exponents(V).V
    ell = len(V)
    nodes = []
    rank0 = []
    for i in range(ell):
        E, tgt = _exit_data(V, (i,), {i: 0.0}, margin)
        nodes.append(CycleNode(i, 0, (i,), E=E, exit_target=tgt, main=i, state_kappa={i: 0.0}))
        rank0.append(i)
    ranks = [rank0]
    current = rank0
    while len(current) > 1:
        owner = {s: nid for nid in current for s in nodes[nid].states}
        succ = {nid: owner[nodes[nid].exit_target] for nid in current}
        cycles, on_cycle = _functional_cycles(current, succ)
        groups = cycles + [[nid] for nid in current if nid not in on_cycle]
        nxt = []
        for members in groups:
            E_children = np.array([nodes[c].E for c in members])
            if len(members) > 1:
                k = _unique_argmin(-E_children, members, "main", margin)
                E_max = E_children[k]
            else:
                k, E_max = 0, E_children[0]
            kap = {c: float(E_max - nodes[c].E) for c in members}
            skap = {}
            for c in members:
                for s, v in nodes[c].state_kappa.items():
                    skap[s] = kap[c] + v
            states = tuple(sorted(skap))
            E, tgt = _exit_data(V, states, skap, margin)
            nid = len(nodes)
            node = CycleNode(nid, len(ranks), states, tuple(members),
                             {c: succ[c] for c in members} if len(members) > 1 else {},
                             E, tgt, nodes[members[k]].main, kap, skap)
            nodes.append(node)
            for c in members:
                nodes[c].parent = nid
            nxt.append(nid)
        ranks.append(nxt)
        current = nxt
    return Hierarchy(V, nodes, ranks, current[0])


def _functional_cycles(items, succ):
    """Cycles of a map on ``items`` (listed in cyclic order from their smallest id)."""
    color = {}
    cycles = []
    on_cycle = set()
    for start in items:
        path = []
        x = start
        while x not in color:
            color[x] = start
            path.append(x)
            x = succ[x]
        if color[x] == start:
            cyc = path[path.index(x):]
            j = cyc.index(min(cyc))
            cyc = cyc[j:] + cyc[:j]
            cycles.append(cyc)
            on_cycle.update(cyc)
    return cycles, on_cycle


# ---------------------------------------------------------------------------
# Metastable profiles

@dataclass
class MetastableProfile:
    initial: int
    thresholds: list
    states: list

    def state_at(self, lam):
        k = int(np.searchsorted(self.thresholds, lam, side="right"))
        return self.states[k]

    def distance_to_threshold(self, lam):
        if not self.thresholds:
            return math.inf
        return float(np.min(np.abs(np.asarray(self.thresholds) - lam)))

    def to_dict(self):
        return {"initial": self.initial, "thresholds": list(self.thresholds), "states": list(self.states)}


def resting_state(hier: Hierarchy, i: int, lam: float) -> int:
    """State where the occupation concentrates at time scale exp(lam/eps), starting from i."""
    s = i
    while True:
        chain = hier.chain(s)
        A = next(n for n in chain if hier.nodes[n].E > lam)
        node = hier.nodes[A]
        if not node.children or all(hier.nodes[c].E <= lam for c in node.children):
            return node.main
        c = hier.child_holding(A, s)
        guard = 0
        while hier.nodes[c].E <= lam:
            s = hier.nodes[c].exit_target
            c = hier.child_holding(A, s)
            guard += 1
            if guard > len(hier.V) + 1:
                raise RuntimeError("cycle walk did not reach a stable child")
        # s is the entry state of child c with E(c) > lam; continue inside c


def metastable_profile(hier, i: int) -> MetastableProfile:
    if not isinstance(hier, Hierarchy):
        hier = build_hierarchy(hier)
    cands = hier.exit_exponents()
    if not cands:
        return MetastableProfile(i, [], [i])
    probes = [cands[0] / 2] + [0.5 * (a + b) for a, b in zip(cands, cands[1:])] + [cands[-1] + 1.0]
    states = [resting_state(hier, i, lam) for lam in probes]
    thresholds = []
    out_states = [states[0]]
    for k in range(1, len(states)):
        if states[k] != out_states[-1]:
            thresholds.append(cands[k - 1])
            out_states.append(states[k])
    if out_states[0] != i:
        raise AssertionError("profile must start at the initial state")
    return MetastableProfile(i, thresholds, out_states)


# ---------------------------------------------------------------------------
# Matrix-exponential oracle

def generator_exp(Q: np.ndarray, log_T: float, max_squarings: int = 1000) -> np.ndarray:
    """exp(Q T) for a rate matrix Q with ``T = exp(log_T)``.

    With ``Lam = max_i |q_ii|`` and ``t0 = T / 2^k`` chosen so that
    ``Lam t0 <= 1``, ``exp(Q t0) = exp(-Lam t0) sum_n ((Q + Lam I) t0)^n / n!``
    is a series of nonnegative matrices (no cancellation even for tiny rates);
    the result is then squared ``k`` times.
    """
    Q = np.asarray(Q, float)
    n = len(Q)
    Lam = float(np.max(-np.diag(Q)))
    if Lam <= 0.0:
        return np.eye(n)
    log_LT = log_T + math.log(Lam)
    k = max(0, math.ceil(log_LT / math.log(2.0)))
    if k > max_squarings:
        raise OverflowError(f"time scale needs {k} squarings (> {max_squarings})")
    t0 = math.exp(log_T - k * math.log(2.0))
    P = (Q + Lam * np.eye(n)) * t0
    term = np.eye(n)
    M = np.eye(n)
    for m in range(1, 60):
        term = term @ P / m
        M = M + term
        if term.max() < 1e-18 * M.max():
            break
    M *= math.exp(-Lam * t0)
    for _ in range(k):
        M = M @ M
        M /= M.sum(axis=1, keepdims=True)
    return M


def rate_matrix(V, eps):
    V = _as_exponents(V).V
    Q = np.exp(-V / eps)
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def oracle_distribution(V, i: int, lam: float, eps: float) -> np.ndarray:
    """Row ``i`` of exp(Q exp(lam/eps)) with ``q_ij = exp(-V_ij/eps)``."""
    V = _as_exponents(V)
    if V.size > 8:
        raise ValueError("oracle limited to 8 states")
    if not 0 < eps <= 0.1:
        raise ValueError("eps must lie in (0, 0.1]")
    return generator_exp(rate_matrix(V, eps), lam / eps)[i]


# ---------------------------------------------------------------------------
# Cauchy-problem limits

def _at(x, y):
    return abs(x - y) <= 1e-12 * max(1.0, abs(y))


def predict_linear_cauchy(V12: float, V21: float, basin: int, lam: float, g1, g2):
    """Limit of u(T, x) for a two-attractor system at time scale exp(lam/eps).

    Starting in basin 1, the solution stays at ``g1`` unless ``lam > V12`` and
    ``V12 < V21``, in which case it switches to ``g2``; basin 2 is symmetric.
    """
    if basin not in (1, 2):
        raise ValueError("basin must be 1 or 2")
    out_exp, back_exp, home, away = (V12, V21, g1, g2) if basin == 1 else (V21, V12, g2, g1)
    if out_exp > back_exp:
        return home
    if _at(lam, out_exp):
        raise ThresholdError(f"lambda={lam} sits at the threshold {out_exp}")
    return home if lam < out_exp else away


@dataclass
class NonlinearPrediction:
    z_bar: float
    lam_bar: float
    limit: float
    weights: tuple  # (weight on mu_1, weight on mu_2)


def _interp_inverse(z, v, lam):
    order = np.argsort(v)
    vs, zs = v[order], z[order]
    if not vs[0] <= lam <= vs[-1]:
        raise ValueError(f"lambda={lam} outside the tabulated range [{vs[0]}, {vs[-1]}]")
    return float(np.interp(lam, vs, zs))


def predict_nonlinear_cauchy(z, V12, V21, basin: int, lam: float, g1: float, g2: float,
                             tol: float = 1e-12) -> NonlinearPrediction:
    """Limit for exponents depending on the solution value ``z``.

    ``V12`` must decrease and ``V21`` increase along ``z``; their crossing gives
    ``(z_bar, lam_bar)``. Above ``lam_bar`` the limit is ``z_bar``; below, it
    is the inverse of the starting basin's curve at ``lam``.
    """
    z = np.asarray(z, float)
    V12 = np.asarray(V12, float)
    V21 = np.asarray(V21, float)
    if not g1 < g2:
        raise ValueError("need g1 < g2")
    if np.any(np.diff(z) <= 0):
        raise ValueError("z grid must increase")
    if np.any(np.diff(V12) > 0) or np.any(np.diff(V21) < 0):
        raise ValueError("V12 must be nonincreasing and V21 nondecreasing")
    d = V12 - V21
    if not (d[0] >= 0 >= d[-1]):
        raise ValueError("V12 and V21 do not cross on the grid")

    def diff_at(x):
        return np.interp(x, z, V12) - np.interp(x, z, V21)

    lo, hi = z[0], z[-1]
    if d[0] == 0:
        hi = lo
    elif d[-1] == 0:
        lo = hi
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if diff_at(mid) > 0:
            lo = mid
        else:
            hi = mid
    z_bar = 0.5 * (lo + hi)
    lam_bar = float(np.interp(z_bar, z, V12))
    if _at(lam, lam_bar):
        raise ThresholdError(f"lambda={lam} sits at lambda_bar={lam_bar}")
    if lam > lam_bar:
        zl = z_bar
    elif basin == 1:
        zl = _interp_inverse(z, V12, lam)
    elif basin == 2:
        zl = _interp_inverse(z, V21, lam)
    else:
        raise ValueError("basin must be 1 or 2")
    w2 = (zl - g1) / (g2 - g1)
    w1 = (g2 - zl) / (g2 - g1)
    if w1 < -1e-12 or w2 < -1e-12:
        raise ValueError("limit value outside [g1, g2]")
    w1, w2 = max(w1, 0.0), max(w2, 0.0)
    return NonlinearPrediction(float(z_bar), lam_bar, float(zl), (w1, w2))


# ---------------------------------------------------------------------------
# Fixtures

def random_generic_v(ell: int, rng: np.random.Generator, low=0.5, high=3.0, margin=0.1,
                     max_tries=1000):
    """Random exponent matrix whose hierarchy choices are all ``margin``-separated."""
    for _ in range(max_tries):
        V = rng.uniform(low, high, size=(ell, ell))
        np.fill_diagonal(V, 0.0)
        try:
            build_hierarchy(V, margin)
        except NonGenericError:
            continue
        return V
    raise RuntimeError("could not draw a generic matrix")
