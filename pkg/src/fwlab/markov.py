"""
Perturbed Markov chains
=======================

Continuous-time chains with rates ``q_ij(eps) = c_ij * exp(-k_ij / eps)``.
The arrow digraph (``i -> j`` when ``k_ij`` is minimal in row ``i``) splits
the states into classes, closed sets with no arrow leaving them, and
transient states. Classes become the states of a chain of the next rank
whose exponents account for the occupancy exponents inside each class.

Invariant measures come from a dense linear solve and, for small classes,
from the spanning-tree formula, which also yields the exponent of each
stationary probability.
"""
from __future__ import annotations

import functools
import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import cycles

__all__ = [
    "RateFamily", "ClassDecomposition", "RankChain", "TreeResult", "arrows", "decompose",
    "invariant_measure_direct", "invariant_measure_tree", "aggregate", "rank_recursion",
    "chain_oracle", "predict_state", "random_rate_family", "eleven_state_family",
    "MAX_TREE_SIZE",
]

MAX_TREE_SIZE = 8
MAX_DIRECT_SIZE = 50
ARROW_TOL = 1e-12


@dataclass(frozen=True)
class RateFamily:
    """Exponential rate model. ``c`` and ``k`` are N x N; diagonals are ignored."""

    c: np.ndarray
    k: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        k = np.array(self.k, dtype=float)
        if c.shape != k.shape or c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("c and k must be square matrices of equal size")
        off = ~np.eye(len(c), dtype=bool)
        if np.any(c[off] <= 0):
            raise ValueError("prefactors must be positive")
        if np.any(~np.isfinite(k[off])) or np.any(k[off] < 0):
            raise ValueError("exponents must be finite and nonnegative")
        np.fill_diagonal(c, 0.0)
        np.fill_diagonal(k, 0.0)
        c.setflags(write=False)
        k.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "k", k)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(len(c))))

    @classmethod
    def from_exponents(cls, k, c=None):
        k = np.asarray(k, float)
        return cls(np.ones_like(k) if c is None else c, k)

    @property
    def size(self):
        return len(self.c)

    def rates(self, eps):
        q = self.c * np.exp(-self.k / eps)
        np.fill_diagonal(q, 0.0)
        return q

    def generator(self, eps, states=None):
        """Generator of the chain restricted to ``states`` (all by default)."""
        q = self.rates(eps)
        if states is not None:
            idx = list(states)
            q = q[np.ix_(idx, idx)]
        Q = q.copy()
        np.fill_diagonal(Q, -q.sum(axis=1))
        return Q

    def to_dict(self):
        return {"c": self.c.tolist(), "k": self.k.tolist(), "labels": list(self.labels)}


# ---------------------------------------------------------------------------
# Arrows and classes

def arrows(rates: RateFamily) -> np.ndarray:
    """Boolean adjacency: ``i -> j`` iff ``k_ij`` attains the minimum of row ``i``."""
    n = rates.size
    A = np.zeros((n, n), bool)
    if n < 2:
        return A
    for i in range(n):
        row = np.delete(rates.k[i], i)
        m = row.min()
        hit = np.flatnonzero(np.abs(rates.k[i] - m) <= ARROW_TOL * max(1.0, abs(m)))
        A[i, hit[hit != i]] = True
    return A


@dataclass
class ClassDecomposition:
    classes: list  # sorted tuples of states
    transient: dict  # state -> sorted tuple of class indices reachable along arrows

    def class_of(self, state):
        for k, cl in enumerate(self.classes):
            if state in cl:
                return k
        return None

    def to_dict(self):
        return {"classes": [list(c) for c in self.classes],
                "transient": {str(s): list(v) for s, v in self.transient.items()}}


def decompose(digraph: np.ndarray) -> ClassDecomposition:
    """Closed strongly connected components of the arrow digraph, plus transient states."""
    A = np.asarray(digraph, bool)
    n = len(A)
    if n == 1:
        return ClassDecomposition([(0,)], {})
    if np.any(A.sum(axis=1) == 0):
        raise AssertionError("every state of an arrow digraph has an outgoing arrow")
    ncomp, lab = connected_components(csr_matrix(A), directed=True, connection="strong")
    closed = []
    for comp in range(ncomp):
        members = np.flatnonzero(lab == comp)
        outside = np.ones(n, bool)
        outside[members] = False
        if not A[np.ix_(members, np.flatnonzero(outside))].any():
            closed.append(tuple(int(m) for m in members))
    closed.sort()
    cls_of = {s: k for k, cl in enumerate(closed) for s in cl}
    transient = {}
    for s in range(n):
        if s in cls_of:
            continue
        seen, stack, reach = {s}, [s], set()
        while stack:
            x = stack.pop()
            for y in np.flatnonzero(A[x]):
                y = int(y)
                if y in cls_of:
                    reach.add(cls_of[y])
                elif y not in seen:
                    seen.add(y)
                    stack.append(y)
        if not reach:
            raise ValueError(f"state {s} reaches no class")
        transient[s] = tuple(sorted(reach))
    return ClassDecomposition(closed, transient)


# ---------------------------------------------------------------------------
# Invariant measures

def _gth(Q):
    """Grassmann-Taksar-Heyman elimination (subtraction-free)."""
    P = np.array(Q, float)
    n = len(P)
    np.fill_diagonal(P, 0.0)
    for k in range(n - 1, 0, -1):
        s = P[k, :k].sum()
        P[:k, k] /= s
        P[:k, :k] += np.outer(P[:k, k], P[k, :k])
        np.fill_diagonal(P, 0.0)
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ P[:k, k]
    return pi / pi.sum()


def invariant_measure_direct(rates: RateFamily, states, eps: float) -> np.ndarray:
    """Solve ``nu Q = 0, sum nu = 1`` on the chain restricted to ``states``.

    Dense LU with partial pivoting; if the residual is not small the
    subtraction-free GTH elimination is used instead.
    """
    states = list(states)
    n = len(states)
    if n > MAX_DIRECT_SIZE:
        raise ValueError(f"class too large ({n} > {MAX_DIRECT_SIZE})")
    if n == 1:
        return np.ones(1)
    Q = rates.generator(eps, states)
    M = Q.T.copy()
    M[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    lu = scipy.linalg.lu_factor(M, check_finite=True)
    nu = scipy.linalg.lu_solve(lu, rhs)
    # componentwise: rows of Q can differ by many orders of magnitude
    scale = np.abs(nu) @ np.abs(Q)
    if np.any(nu < -1e-14) or np.any(np.abs(nu @ Q) > 1e-12 * scale):
        nu = _gth(Q)
    nu = np.clip(nu, 0.0, None)
    return nu / nu.sum()


@dataclass
class TreeResult:
    nu: np.ndarray
    exponents: np.ndarray  # kappa_i = (tree minimum at i) - min over roots
    limit: np.ndarray  # lim nu(eps) as eps -> 0
    prefactors: np.ndarray  # leading coefficients: nu_i ~ prefactor_i * exp(-kappa_i/eps)


@functools.lru_cache(maxsize=32)
def _parent_arrays(n, root):
    """All maps from non-root nodes to parents forming a tree rooted at ``root``."""
    others = np.array([j for j in range(n) if j != root], dtype=np.int16)
    m = len(others)
    base = n - 1
    code = np.arange(base ** m, dtype=np.int64)
    digits = np.empty((len(code), m), dtype=np.int16)
    for col in range(m):
        digits[:, col] = code % base
        code //= base
    # digit d selects the d-th node other than the child itself
    par = np.empty((len(digits), n), dtype=np.int16)
    par[:, root] = root
    par[:, others] = digits + (digits >= others)
    # pointer doubling: after ceil(log2 n) squarings every node in a tree reaches the root
    anc = par.astype(np.intp)
    for _ in range(max(1, math.ceil(math.log2(n)))):
        anc = np.take_along_axis(anc, anc, axis=1)
    ok = np.all(anc == root, axis=1)
    trees = par[ok]
    trees.setflags(write=False)
    return trees, tuple(int(o) for o in others)


def invariant_measure_tree(rates: RateFamily, states, eps: float) -> TreeResult:
    """Markov chain tree theorem: ``nu_i`` proportional to the sum over spanning
    trees directed toward ``i`` of the product of their rates."""
    states = list(states)
    n = len(states)
    if n > MAX_TREE_SIZE:
        raise ValueError(f"tree enumeration limited to {MAX_TREE_SIZE} states, got {n}")
    if n == 1:
        one = np.ones(1)
        return TreeResult(one, np.zeros(1), one, one)
    k = rates.k[np.ix_(states, states)]
    c = rates.c[np.ix_(states, states)]
    logw = []
    tmin = np.empty(n)
    tpref = np.empty(n)
    for root in range(n):
        par, others = _parent_arrays(n, root)
        idx = np.asarray(others)
        P = par[:, idx].astype(np.intp)
        kk = k[idx, P].sum(axis=1)
        lc = np.log(c[idx, P]).sum(axis=1)
        logw.append(lc - kk / eps)
        tmin[root] = kk.min()
        near = kk <= tmin[root] + 1e-9 * max(1.0, tmin[root])
        tpref[root] = np.exp(lc[near]).sum()
    top = max(w.max() for w in logw)
    weights = np.array([np.exp(w - top).sum() for w in logw])
    nu = weights / weights.sum()
    kappa = tmin - tmin.min()
    lead = kappa <= 1e-9 * max(1.0, tmin.min())
    limit = np.where(lead, tpref, 0.0)
    limit /= limit.sum()
    pref = tpref / tpref[lead].sum()
    return TreeResult(nu, kappa, limit, pref)


# ---------------------------------------------------------------------------
# Aggregation into the next rank

@dataclass
class RankChain:
    rank: int
    nodes: list  # each node: sorted tuple of original states
    rates: RateFamily  # between nodes; exponent inf-free, prefactors heuristic
    measures: list  # per node: TreeResult over its states (or None above the tree cap)
    decomposition: ClassDecomposition
    ties: list = field(default_factory=list)

    def to_dict(self):
        return {"rank": self.rank, "nodes": [list(n) for n in self.nodes],
                "k": self.rates.k.tolist(), "c_heuristic": self.rates.c.tolist(),
                "limits": [None if m is None else m.limit.tolist() for m in self.measures],
                "ties": self.ties}


def _transient_costs(k, c, transient, targets_of):
    """Cheapest continuation from each transient state to each class.

    Step cost from transient ``y`` to ``z`` is the excess ``k_yz - min_l k_yl``;
    paths stop at the first class state. Returns ``{y: {class: (cost, pref)}}``.
    """
    n = len(k)
    out = {}
    for y0 in transient:
        best = {}
        dist = {y0: 0.0}
        pref = {y0: 1.0}
        heap = [(0.0, y0)]
        done = set()
        while heap:
            d, y = heapq.heappop(heap)
            if y in done:
                continue
            done.add(y)
            row = np.delete(np.arange(n), y)
            m = k[y, row].min()
            lead = row[np.abs(k[y, row] - m) <= ARROW_TOL * max(1.0, m)]
            csum = c[y, lead].sum()
            for z in row:
                z = int(z)
                nd = d + k[y, z] - m
                npf = pref[y] * c[y, z] / csum
                if z in targets_of:
                    cl = targets_of[z]
                    if cl not in best or nd < best[cl][0] - 1e-12:
                        best[cl] = (nd, npf)
                elif z not in done and (z not in dist or nd < dist[z] - 1e-12):
                    dist[z], pref[z] = nd, npf
                    heapq.heappush(heap, (nd, z))
        out[y0] = best
    return out


def aggregate(rates: RateFamily, decomposition: ClassDecomposition | None = None,
              rank: int = 1) -> RankChain:
    """Rate family between the classes of ``rates``.

    ``K(E -> D) = min over c in E and exits of [kappa(c) + k_cy + h(y -> D)]``
    where ``h`` is zero for ``y`` in ``D`` and the transient folding cost
    otherwise. Prefactors follow the minimizing route and are heuristic.
    """
    if decomposition is None:
        decomposition = decompose(arrows(rates))
    classes = decomposition.classes
    m = len(classes)
    k, c = rates.k, rates.c
    measures = []
    for cl in classes:
        measures.append(invariant_measure_tree(rates, cl, 1.0) if len(cl) <= MAX_TREE_SIZE else None)
    if m == 1:
        return RankChain(rank, list(classes), RateFamily(np.zeros((1, 1)), np.zeros((1, 1))),
                         measures, decomposition)
    targets_of = {s: j for j, cl in enumerate(classes) for s in cl}
    fold = _transient_costs(k, c, list(decomposition.transient), targets_of)
    K = np.full((m, m), np.inf)
    C = np.ones((m, m))
    ties = []
    for e, cl in enumerate(classes):
        tr = measures[e]
        if tr is None:
            raise ValueError("class exceeds the tree-formula size limit")
        cand = {}
        for a, x in enumerate(cl):
            for y in range(rates.size):
                if y in cl:
                    continue
                base = tr.exponents[a] + k[x, y]
                pf = tr.prefactors[a] * c[x, y]
                if y in targets_of:
                    routes = {targets_of[y]: (0.0, 1.0)}
                else:
                    routes = fold[y]
                for d, (h, hp) in routes.items():
                    if d == e:
                        continue
                    val = base + h
                    cand.setdefault(d, []).append((val, pf * hp))
        for d, lst in cand.items():
            best = min(v for v, _ in lst)
            near = [p for v, p in lst if v <= best + 1e-9 * max(1.0, best)]
            K[e, d] = best
            C[e, d] = sum(near)
        row = [K[e, d] for d in range(m) if d != e and np.isfinite(K[e, d])]
        if row:
            mn = min(row)
            tied = [d for d in range(m) if d != e and abs(K[e, d] - mn) <= 1e-9 * max(1.0, mn)]
            if len(tied) > 1:
                ties.append((e, tied))
    if np.any(~np.isfinite(K[~np.eye(m, dtype=bool)])):
        # classes that cannot reach each other directly get a large finite exponent
        finite = K[np.isfinite(K)]
        big = 10.0 * (finite.max() if finite.size else 1.0) + 1.0
        K[~np.isfinite(K)] = big
    np.fill_diagonal(K, 0.0)
    nodes = [tuple(sorted(cl)) for cl in classes]
    return RankChain(rank, nodes, RateFamily(C, K), measures, decomposition, ties)


def rank_recursion(rates: RateFamily, max_rank: int = 64) -> list:
    """Aggregate repeatedly until one node holds all states."""
    chains = []
    current = rates
    groups = [(s,) for s in range(rates.size)]
    for r in range(1, max_rank + 1):
        chain = aggregate(current, rank=r)
        chain.nodes = [tuple(sorted(s for g in node for s in groups[g])) for node in chain.nodes]
        chains.append(chain)
        if len(chain.nodes) == 1:
            # transient states drain into the last class, so the top node holds everything
            chain.nodes = [tuple(range(rates.size))]
            return chains
        if len(chain.nodes) >= len(groups):
            raise AssertionError("aggregation did not reduce the node count")
        groups = chain.nodes
        current = chain.rates
    raise RuntimeError("rank recursion did not terminate")


# ---------------------------------------------------------------------------
# Oracle and predictions

def chain_oracle(rates: RateFamily, i: int, lam: float, eps: float) -> np.ndarray:
    """Row ``i`` of exp(Q(eps) exp(lam/eps))."""
    if rates.size > 8:
        raise ValueError("oracle limited to 8 states")
    return cycles.generator_exp(rates.generator(eps), lam / eps)[i]


def predict_state(rates: RateFamily, i: int, lam: float) -> int:
    """Metastable state at time scale exp(lam/eps) from state ``i``.

    Uses the cycle hierarchy of the exponent matrix ``k`` (prefactors do not
    affect the limit in the generic case).
    """
    hier = cycles.build_hierarchy(rates.k)
    return cycles.resting_state(hier, i, lam)


# ---------------------------------------------------------------------------
# Fixtures

def random_rate_family(n: int, rng: np.random.Generator, low=0.5, high=3.0) -> RateFamily:
    k = rng.uniform(low, high, size=(n, n))
    c = rng.uniform(0.5, 2.0, size=(n, n))
    return RateFamily(c, k)


ELEVEN_STATE_ARROWS = [(1, 2), (2, 3), (3, 1), (4, 5), (5, 4), (6, 9), (9, 6), (6, 7), (7, 8),
                      (8, 9), (10, 9), (10, 5), (11, 7), (11, 8)]


def eleven_state_family() -> RateFamily:
    """Eleven states whose minimal exponents reproduce the arrow picture
    with classes {1,2,3}, {4,5}, {6,7,8,9} and transient states 10, 11
    (0-based internally)."""
    n = 11
    k = np.full((n, n), 2.0)
    for i, j in ELEVEN_STATE_ARROWS:
        k[i - 1, j - 1] = 1.0
    np.fill_diagonal(k, 0.0)
    return RateFamily(np.ones((n, n)), k)


def rank_chain_json(chains) -> str:
    return json.dumps([ch.to_dict() for ch in chains], indent=2)
