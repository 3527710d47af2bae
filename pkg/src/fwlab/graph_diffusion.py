"""
Diffusions on metric graphs
===========================

On each edge the process has generator ``(1/(2T)) (A u')' + (B/T) u'`` (see
:mod:`fwlab.reeb`); at an interior vertex ``O`` the gluing condition

    sum_j s_j gamma_j D_j u(O) = 0,   s_j = +1 if edge j lies above O, else -1,

selects how the process branches. Dirichlet problems are solved by finite
differences in flux form with one global sparse system; the same vertex
treatment gives the narrow-channel Neumann problem ``(l u')' = 2 l f``.
Monte Carlo uses Euler-Maruyama inside edges and redistributes paths that
reach a vertex shell of radius ``delta_v`` with probabilities
``gamma_j / sum gamma``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .reeb import EdgeCoefficients, Edge, GluingData, ReebGraph, Vertex, edge_coefficients, \
    gluing_coefficients
from .rng import RngStream

__all__ = [
    "GraphDiffusionSpec", "GraphState", "GraphBVP", "GraphSolution", "SingularSystemError",
    "simulate", "solve_dirichlet", "solve_neumann_channel", "hitting_probabilities",
    "ChannelSpec", "y_graph", "SimulationResult", "TransitionLaw", "transition_law",
]


class SingularSystemError(RuntimeError):
    pass


@dataclass(frozen=True)
class GraphState:
    edge: int
    h: float


@dataclass
class GraphDiffusionSpec:
    graph: ReebGraph
    coefficients: dict  # edge id -> EdgeCoefficients
    gluing: dict  # vertex id -> GluingData

    def __post_init__(self):
        for v in self.graph.vertices:
            if self.graph.degree(v.id) > 1:
                g = self.gluing.get(v.id)
                if g is None or set(g.gamma) != {e.id for e in self.graph.incident(v.id)}:
                    raise ValueError(f"vertex {v.id} needs a gamma for every incident edge")
                if any(val <= 0 for val in g.gamma.values()):
                    raise ValueError(f"gamma must be positive at vertex {v.id}")

    @classmethod
    def from_reeb(cls, field, graph, a=None, beta=None, n_levels=40, delta=None):
        coeffs = {e.id: edge_coefficients(field, graph, e.id, a, beta, n=n_levels) for e in graph.edges}
        glue = {v.id: gluing_coefficients(field, graph, v.id, a, delta) for v in graph.saddles()}
        return cls(graph, coeffs, glue)

    def upper(self, eid):
        return self.graph.edge_upper(eid)

    def exterior(self, vid):
        return vid is not None and self.graph.degree(vid) == 1

    def coefficient(self, eid, name, h):
        return self.coefficients[eid].interp(name, h)


def y_graph(abar=1.0, betabar=0.0, gamma=(1.0, 1.0, 1.0), length=1.0, n=21):
    """Hand-built Y: edge 0 on [-L, 0] below vertex 1, edges 1 and 2 on [0, L] above it.

    ``abar``/``betabar`` may be scalars or 3-tuples (one per edge); each edge's
    gluing coefficient defaults to 1.
    """
    L = float(length)
    verts = [Vertex(0, "minimum", (0.0, -L), -L), Vertex(1, "saddle", (0.0, 0.0), 0.0),
             Vertex(2, "end", (-1.0, L), L), Vertex(3, "end", (1.0, L), L)]
    edges = [Edge(0, 0, 1, -L, 0.0, (0,)), Edge(1, 1, 2, 0.0, L, ()), Edge(2, 1, 3, 0.0, L, ())]
    graph = ReebGraph(verts, edges, None)
    ab = np.broadcast_to(np.asarray(abar, float), (3,))
    bb = np.broadcast_to(np.asarray(betabar, float), (3,))
    coeffs = {}
    for e in edges:
        z = np.linspace(e.z_lo, e.z_hi, n)
        coeffs[e.id] = EdgeCoefficients.hand_built(e.id, z, ab[e.id], bb[e.id])
    glue = {1: GluingData(1, {0: gamma[0], 1: gamma[1], 2: gamma[2]}, {0: -1, 1: 1, 2: 1})}
    return GraphDiffusionSpec(graph, coeffs, glue)


# ---------------------------------------------------------------------------
# Boundary value problems

@dataclass
class GraphBVP:
    """Dirichlet data on a graph.

    ``cuts[e] = {"lo": (h, psi), "hi": (h, psi)}`` trims edge ``e`` to the part
    between the cut levels and imposes ``psi`` there. ``vertex_values`` fixes
    the value at exterior vertices. Edges in ``exclude`` are not part of the
    domain.
    """

    cuts: dict = field(default_factory=dict)
    vertex_values: dict = field(default_factory=dict)
    exclude: frozenset = frozenset()
    n: int = 400

    def psi_values(self):
        vals = list(self.vertex_values.values())
        for c in self.cuts.values():
            vals.extend(v[1] for v in c.values() if v is not None)
        return vals


@dataclass
class GraphSolution:
    h: dict  # edge id -> mesh
    v: dict  # edge id -> values
    residuals: dict = field(default_factory=dict)  # vertex id -> gluing residual

    def __call__(self, edge, h):
        return float(np.interp(h, self.h[edge], self.v[edge]))

    def value_range(self):
        allv = np.concatenate(list(self.v.values()))
        return float(allv.min()), float(allv.max())

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["edge", "h", "v"])
        for e in sorted(self.h):
            for hh, vv in zip(self.h[e], self.v[e]):
                w.writerow([e, repr(float(hh)), repr(float(vv))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        return text


def _d_end(h, at_lo):
    """Second-order one-sided derivative weights at an edge end."""
    if at_lo:
        return np.array([-3.0, 4.0, -1.0]) / (2 * h), (0, 1, 2)
    return np.array([3.0, -4.0, 1.0]) / (2 * h), (-1, -2, -3)


class _Assembler:
    def __init__(self, meshes):
        self.meshes = meshes
        self.offset = {}
        n = 0
        for e in sorted(meshes):
            self.offset[e] = n
            n += len(meshes[e])
        self.size = n
        self.rows, self.cols, self.vals = [], [], []
        self.rhs = np.zeros(n)
        self.row = 0

    def idx(self, e, k):
        m = len(self.meshes[e])
        return self.offset[e] + (k % m)

    def add(self, entries, rhs=0.0):
        for col, val in entries:
            self.rows.append(self.row)
            self.cols.append(col)
            self.vals.append(val)
        self.rhs[self.row] = rhs
        self.row += 1

    def matrix(self, extra=0):
        n = self.size + extra
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(n, n))


def _edge_meshes(spec, bvp):
    meshes, ends = {}, {}
    for e in spec.graph.edges:
        if e.id in bvp.exclude:
            continue
        cut = bvp.cuts.get(e.id, {})
        lo = cut.get("lo")
        hi = cut.get("hi")
        a = lo[0] if lo else e.z_lo
        b = hi[0] if hi else spec.upper(e.id)
        if b is None:
            raise ValueError(f"edge {e.id} needs a cap or a cut")
        if not b > a:
            raise ValueError(f"edge {e.id}: empty interval [{a}, {b}]")
        meshes[e.id] = np.linspace(a, b, bvp.n + 1)
        ends[e.id] = (lo, hi)
    return meshes, ends


def _vertex_groups(spec, meshes, ends):
    """Interior vertices with the in-domain edge ends that touch them."""
    groups = {}
    for e in spec.graph.edges:
        if e.id not in meshes:
            continue
        lo, hi = ends[e.id]
        if lo is None:
            groups.setdefault(e.lo, []).append((e.id, True))
        if hi is None and e.hi is not None:
            groups.setdefault(e.hi, []).append((e.id, False))
    return groups


def _interior_rows(asm, e, mesh, coef):
    """Flux-form rows of (1/2)(A u')' + B u' = 0 at interior nodes."""
    h = mesh[1] - mesh[0]
    half = 0.5 * (mesh[1:] + mesh[:-1])
    Ah = np.maximum(coef.interp("A", half), 0.0)
    B = coef.interp("B", mesh)
    for k in range(1, len(mesh) - 1):
        am, ap = Ah[k - 1], Ah[k]
        asm.add([(asm.idx(e, k - 1), 0.5 * am / h**2 - B[k] / (2 * h)),
                 (asm.idx(e, k), -0.5 * (am + ap) / h**2),
                 (asm.idx(e, k + 1), 0.5 * ap / h**2 + B[k] / (2 * h))])


def _end_rows(spec, asm, meshes, ends, groups, vertex_values, weights):
    """Boundary, exterior and vertex rows. ``weights(e, vertex)`` gives the
    flux weight of edge ``e`` in the balance at ``vertex``."""
    graph = spec.graph
    for e in graph.edges:
        if e.id not in meshes:
            continue
        lo, hi = ends[e.id]
        h = meshes[e.id][1] - meshes[e.id][0]
        for at_lo, cut, vid in ((True, lo, e.lo), (False, hi, e.hi)):
            k = 0 if at_lo else -1
            if cut is not None:
                asm.add([(asm.idx(e.id, k), 1.0)], cut[1])
            elif vid is not None and vid in vertex_values:
                asm.add([(asm.idx(e.id, k), 1.0)], vertex_values[vid])
            elif vid is None or spec.exterior(vid):
                # cap of the unbounded edge, or an exterior vertex: zero derivative
                w, ks = _d_end(h, at_lo)
                asm.add([(asm.idx(e.id, kk), ww) for kk, ww in zip(ks, w)])
    for vid, members in sorted(groups.items()):
        if vid in vertex_values or spec.exterior(vid) or len(members) < 2:
            continue
        e0, lo0 = members[0]
        entries = []
        for e, at_lo in members:
            h = meshes[e][1] - meshes[e][0]
            w, ks = _d_end(h, at_lo)
            s = 1.0 if at_lo else -1.0
            g = weights(e, vid)
            entries += [(asm.idx(e, kk), s * g * ww) for kk, ww in zip(ks, w)]
        asm.add(entries)
        for e, at_lo in members[1:]:
            asm.add([(asm.idx(e, 0 if at_lo else -1), 1.0), (asm.idx(e0, 0 if lo0 else -1), -1.0)])


def _gluing_residuals(spec, meshes, groups, sol, weights):
    res = {}
    for vid, members in groups.items():
        if len(members) < 2 or spec.exterior(vid):
            continue
        total, scale = 0.0, 0.0
        for e, at_lo in members:
            h = meshes[e][1] - meshes[e][0]
            w, ks = _d_end(h, at_lo)
            d = float(np.dot(w, sol[e][list(ks)]))
            s = 1.0 if at_lo else -1.0
            total += s * weights(e, vid) * d
            scale = max(scale, abs(weights(e, vid) * d))
        res[vid] = (total, scale)
    return res


def _check_anchored(spec, bvp, meshes, ends):
    """Every connected piece of the domain must carry some Dirichlet data."""
    parent = {e: e for e in meshes}

    def find(e):
        while parent[e] != e:
            parent[e] = parent[parent[e]]
            e = parent[e]
        return e

    for vid, members in _vertex_groups(spec, meshes, ends).items():
        for e, _ in members[1:]:
            parent[find(e)] = find(members[0][0])
    anchored = set()
    for e in meshes:
        edge = spec.graph.edges[e]
        lo, hi = ends[e]
        if lo is not None or hi is not None or edge.lo in bvp.vertex_values or \
                (edge.hi is not None and edge.hi in bvp.vertex_values):
            anchored.add(find(e))
    loose = sorted(e for e in meshes if find(e) not in anchored)
    if loose:
        raise SingularSystemError(f"edges {loose} are not connected to any boundary data")


def solve_dirichlet(spec: GraphDiffusionSpec, bvp: GraphBVP) -> GraphSolution:
    """Finite-difference solution of ``L u = 0`` with gluing conditions and Dirichlet data."""
    if not bvp.cuts and not bvp.vertex_values:
        raise ValueError("Dirichlet problem needs boundary data")
    meshes, ends = _edge_meshes(spec, bvp)
    _check_anchored(spec, bvp, meshes, ends)
    groups = _vertex_groups(spec, meshes, ends)
    asm = _Assembler(meshes)
    for e, mesh in meshes.items():
        _interior_rows(asm, e, mesh, spec.coefficients[e])

    def weights(e, vid):
        return spec.gluing[vid].gamma[e]

    _end_rows(spec, asm, meshes, ends, groups, bvp.vertex_values, weights)
    if asm.row != asm.size:
        raise SingularSystemError(f"assembled {asm.row} rows for {asm.size} unknowns")
    M = asm.matrix().tocsc()
    with np.errstate(all="ignore"):
        try:
            u = spla.spsolve(M, asm.rhs)
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(u)):
        raise SingularSystemError("singular system (is boundary data reachable from every edge?)")
    sol = {e: u[asm.offset[e]:asm.offset[e] + len(m)] for e, m in meshes.items()}
    res = _gluing_residuals(spec, meshes, groups, sol, weights)
    return GraphSolution(meshes, sol, res)


def hitting_probabilities(spec: GraphDiffusionSpec, start: GraphState, targets, n: int = 400,
                          exclude=frozenset()) -> np.ndarray:
    """P(reach target k first) for exterior vertices or cuts ``(edge, side, h)``."""
    out = []
    for k in range(len(targets)):
        vv, cuts = {}, {}
        for j, t in enumerate(targets):
            val = 1.0 if j == k else 0.0
            if isinstance(t, (int, np.integer)):
                vv[int(t)] = val
            else:
                e, side, h = t
                cuts.setdefault(e, {})[side] = (h, val)
        sol = solve_dirichlet(spec, GraphBVP(cuts, vv, frozenset(exclude), n))
        out.append(sol(start.edge, start.h))
    return np.asarray(out)


# ---------------------------------------------------------------------------
# Narrow channels

@dataclass
class ChannelSpec:
    """A metric graph with channel widths ``width[e](x)`` on each edge."""

    graph: ReebGraph
    width: dict  # edge id -> callable
    cap: float | None = None


def solve_neumann_channel(ch: ChannelSpec, fbar: dict, n: int = 1000, tol: float = 1e-8) -> GraphSolution:
    """Solve ``(l u')' = 2 l f`` with flux balance at vertices, zero flux at
    exterior ends and ``sum_k int u l_k dx = 0``."""
    spec = GraphDiffusionSpec.__new__(GraphDiffusionSpec)
    spec.graph = ch.graph
    spec.coefficients, spec.gluing = {}, {}
    bvp = GraphBVP(n=n)
    meshes, ends = _edge_meshes(spec, bvp)
    total = 0.0
    quad = {}
    for e, mesh in meshes.items():
        w = np.full(len(mesh), mesh[1] - mesh[0])
        w[[0, -1]] *= 0.5
        quad[e] = w
        total += float(np.sum(w * ch.width[e](mesh) * fbar[e](mesh)))
    if abs(total) > tol:
        raise ValueError(f"solvability violated: sum int f l dx = {total:.3e}")
    groups = _vertex_groups(spec, meshes, ends)
    asm = _Assembler(meshes)
    pde_rows = []
    for e, mesh in meshes.items():
        h = mesh[1] - mesh[0]
        half = 0.5 * (mesh[1:] + mesh[:-1])
        lh = ch.width[e](half)
        lm = ch.width[e](mesh)
        f = fbar[e](mesh)
        for k in range(1, len(mesh) - 1):
            pde_rows.append(asm.row)
            asm.add([(asm.idx(e, k - 1), lh[k - 1] / h**2), (asm.idx(e, k), -(lh[k - 1] + lh[k]) / h**2),
                     (asm.idx(e, k + 1), lh[k] / h**2)], 2.0 * lm[k] * f[k])

    def weights(e, vid):
        edge = ch.graph.edges[e]
        mesh = meshes[e]
        x = mesh[0] if edge.lo == vid else mesh[-1]
        return float(ch.width[e](np.array([x]))[0])

    _end_rows(spec, asm, meshes, ends, groups, {}, weights)
    n_u = asm.size
    # bordered system: multiplier column on the PDE rows, normalisation row
    for r in pde_rows:
        asm.rows.append(r)
        asm.cols.append(n_u)
        asm.vals.append(1.0)
    norm = []
    for e, mesh in meshes.items():
        wl = quad[e] * ch.width[e](mesh)
        norm += [(asm.idx(e, k), float(wl[k])) for k in range(len(mesh))]
    asm.rhs = np.append(asm.rhs, 0.0)
    asm.add(norm, 0.0)
    M = asm.matrix(extra=1).tocsc()
    u = spla.spsolve(M, asm.rhs)
    if not np.all(np.isfinite(u)):
        raise SingularSystemError("singular channel system")
    sol = {e: u[asm.offset[e]:asm.offset[e] + len(m)] for e, m in meshes.items()}
    return GraphSolution(meshes, sol, {"multiplier": float(u[-1])})


# ---------------------------------------------------------------------------
# Transition law

@dataclass
class TransitionLaw:
    """Law of ``Z_t`` on mesh nodes: ``mass[e][k]`` at level ``h[e][k]``."""

    h: dict
    mass: dict
    t: float

    def marginal(self):
        """Levels and weights of the H-marginal, all edges pooled."""
        keys = sorted(self.h)
        return np.concatenate([self.h[e] for e in keys]), np.concatenate([self.mass[e] for e in keys])

    def edge_masses(self):
        return {e: float(m.sum()) for e, m in self.mass.items()}


def _chain(spec, n):
    """Markov-chain generator on the edge meshes.

    Inside an edge the rates are the flux-form stencil of
    ``(1/2T)(A u')' + (B/T) u'`` with upwinded drift. Vertices carry no
    mass: a jump into an interior vertex lands on the first node of edge j
    with probability proportional to ``gamma_j / h_j``.
    """
    graph = spec.graph
    nodes, index = {}, {}
    count = 0
    for e in graph.edges:
        top = spec.upper(e.id)
        if top is None:
            raise ValueError("the unbounded edge needs a cap")
        mesh = np.linspace(e.z_lo, top, n + 1)
        keep = np.ones(n + 1, bool)
        if graph.degree(e.lo) > 1:
            keep[0] = False
        if e.hi is not None and graph.degree(e.hi) > 1:
            keep[-1] = False
        nodes[e.id] = (mesh, keep)
        index[e.id] = np.full(n + 1, -1)
        index[e.id][keep] = np.arange(count, count + keep.sum())
        count += int(keep.sum())
    rows, cols, vals = [], [], []

    def add(i, j, r):
        rows.append(i)
        cols.append(j)
        vals.append(r)

    entry = {}
    for v in graph.vertices:
        if graph.degree(v.id) > 1:
            # discrete gluing: weight gamma_j / h_j, the conductance to edge j
            g = spec.gluing[v.id]
            cond = {j: g.gamma[j] / (nodes[j][0][1] - nodes[j][0][0]) for j in g.gamma}
            tot = sum(cond.values())
            entry[v.id] = [(index[j][1] if graph.edges[j].lo == v.id else index[j][-2], cond[j] / tot)
                           for j in sorted(cond)]
    for e in graph.edges:
        mesh, keep = nodes[e.id]
        c = spec.coefficients[e.id]
        h = mesh[1] - mesh[0]
        half = 0.5 * (mesh[1:] + mesh[:-1])
        Ah = np.maximum(c.interp("A", half), 0.0)
        Tn = c.interp("T", mesh)
        Bn = c.interp("B", mesh)
        idx = index[e.id]
        for k in np.flatnonzero(keep):
            i = idx[k]
            T = max(Tn[k], 1e-300)
            for nb, a_half, b_part in ((k + 1, Ah[k] if k < n else 0.0, max(Bn[k], 0.0)),
                                       (k - 1, Ah[k - 1] if k > 0 else 0.0, max(-Bn[k], 0.0))):
                if nb < 0 or nb > n:
                    continue  # reflecting end
                r = (0.5 * a_half / h**2 + b_part / h) / T
                if r <= 0:
                    continue
                if keep[nb]:
                    add(i, idx[nb], r)
                else:
                    vid = e.lo if nb == 0 else e.hi
                    for j, p in entry[vid]:
                        if j != i:
                            add(i, j, r * p)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(count, count))
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    return Q.tocsr(), nodes, index


def transition_law(spec: GraphDiffusionSpec, start: GraphState, t: float, n: int = 400) -> TransitionLaw:
    """Distribution of the graph process at time ``t`` from ``start``,
    computed as ``p0 exp(t Q)`` for the chain of :func:`_chain`."""
    Q, nodes, index = _chain(spec, n)
    mesh, keep = nodes[start.edge]
    p0 = np.zeros(Q.shape[0])
    s = (start.h - mesh[0]) / (mesh[1] - mesh[0])
    k = int(np.clip(np.floor(s), 0, n - 1))
    w = s - k
    for kk, ww in ((k, 1 - w), (k + 1, w)):
        if not keep[kk]:
            kk = kk + 1 if kk == 0 else kk - 1
        p0[index[start.edge][kk]] += ww
    if Q.shape[0] > 4000:
        raise ValueError(f"{Q.shape[0]} mesh nodes is too many for a dense exponential; lower n")
    # expm_multiply stalls on these stiff generators; the dense exponential
    # with scaling and squaring is fast at this size.
    pt = p0 @ scipy.linalg.expm(Q.toarray() * t)
    pt = np.maximum(pt, 0.0)
    pt /= pt.sum()
    hs, ms = {}, {}
    for e in spec.graph.edges:
        mesh, keep = nodes[e.id]
        hs[e.id] = mesh[keep]
        ms[e.id] = pt[index[e.id][keep]]
    return TransitionLaw(hs, ms, t)


# ---------------------------------------------------------------------------
# Monte Carlo

@dataclass
class SimulationResult:
    edge: np.ndarray
    h: np.ndarray
    exit_time: np.ndarray  # nan for paths not absorbed
    exit_side: np.ndarray  # index into the absorbing list, -1 if not absorbed
    times: np.ndarray = None
    h_history: np.ndarray = None
    edge_history: np.ndarray = None


def _coef_bounds(spec, edges_used):
    amax, dmax = 0.0, 0.0
    for e in edges_used:
        c = spec.coefficients[e]
        amax = max(amax, float(np.max(c.abar)))
        dmax = max(dmax, float(np.max(np.abs(c.drift))))
    return amax, dmax


class _Tables:
    """Per-edge coefficients resampled on uniform grids for vectorised lookup."""

    def __init__(self, spec, n=1024):
        edges = spec.graph.edges
        self.z0 = np.array([e.z_lo for e in edges])
        top = np.array([spec.upper(e.id) for e in edges], float)
        self.inv_dz = (n - 1) / (top - self.z0)
        self.base = np.arange(len(edges)) * n
        self.n = n
        grids = [np.linspace(e.z_lo, spec.upper(e.id), n) for e in edges]
        self.abar = np.concatenate([np.maximum(spec.coefficients[e.id].interp("abar", g), 0.0)
                                    for e, g in zip(edges, grids)])
        self.drift = np.concatenate([spec.coefficients[e.id].interp("drift", g) for e, g in zip(edges, grids)])

    def lookup(self, edge, h):
        s = (h - self.z0[edge]) * self.inv_dz[edge]
        k = np.minimum(np.maximum(s.astype(np.int64), 0), self.n - 2)
        w = s - k
        k += self.base[edge]
        a = self.abar[k] + (self.abar[k + 1] - self.abar[k]) * w
        b = self.drift[k] + (self.drift[k + 1] - self.drift[k]) * w
        return np.maximum(a, 0.0), b


def simulate(spec: GraphDiffusionSpec, start: GraphState, dt: float, T: float, delta_v: float,
             rng: RngStream, n_paths: int = 1, absorbing=(), record_every: int | None = None,
             stop_when_absorbed: bool = True, vertex_rule: str = "reach",
             minimum_offset: float = 0.0) -> SimulationResult:
    """Euler-Maruyama for the graph process.

    ``absorbing`` lists cuts ``(edge, h)``; paths crossing one stop there.
    With ``vertex_rule="reach"`` a path that reaches an interior vertex is
    restarted at distance ``delta_v`` on an incident edge chosen with
    probability ``gamma_j / sum gamma``; ``"shell"`` does the same as soon as
    the path comes within ``delta_v`` of the vertex, which costs an O(1)
    error per visit and is kept only for comparison. Minima reflect at
    ``minimum_offset`` above their level; other exterior ends and the cap of
    the unbounded edge reflect at the level itself. Truncating the unbounded edge biases
    the law by the mass that would have gone above the cap.
    """
    if vertex_rule not in ("reach", "shell"):
        raise ValueError(f"unknown vertex_rule {vertex_rule!r}")
    graph = spec.graph
    if any(spec.upper(e.id) is None for e in graph.edges):
        raise ValueError("the unbounded edge needs a cap")
    amax, dmax = _coef_bounds(spec, [e.id for e in graph.edges])
    need = dmax * dt + 3.0 * np.sqrt(amax * dt)
    if not delta_v > need:
        raise ValueError(f"delta_v={delta_v} must exceed max drift*dt + 3 sqrt(abar_max dt) = {need:.4g}")
    tab = _Tables(spec)
    n_steps = int(np.floor(T / dt + 1e-9))
    sq = np.sqrt(dt)

    n_e = len(graph.edges)
    lo_lvl, hi_lvl = np.empty(n_e), np.empty(n_e)
    lo_branch = np.full(n_e, -1)
    hi_branch = np.full(n_e, -1)
    branch = {}
    for v in graph.vertices:
        if graph.degree(v.id) > 1:
            g = spec.gluing[v.id]
            ids = sorted(g.gamma)
            p = np.array([g.gamma[i] for i in ids])
            branch[v.id] = (np.array(ids), np.cumsum(p / p.sum()), v.value,
                            np.array([1.0 if graph.edges[i].lo == v.id else -1.0 for i in ids]))
    for e in graph.edges:
        lo_lvl[e.id] = e.z_lo + (delta_v if e.lo in branch else minimum_offset)
        if e.lo in branch:
            lo_branch[e.id] = e.lo
        top = spec.upper(e.id)
        if e.hi in branch:
            hi_lvl[e.id] = top - delta_v if vertex_rule == "shell" else top
            hi_branch[e.id] = e.hi
        else:
            hi_lvl[e.id] = top
        if e.lo in branch and vertex_rule == "reach":
            lo_lvl[e.id] = e.z_lo
    absorbing = [(int(ae), float(ah)) for ae, ah in absorbing]

    # final state of every path; the working arrays below hold live paths only
    edge_out = np.full(n_paths, start.edge, dtype=np.int64)
    h_out = np.full(n_paths, float(start.h))
    exit_time = np.full(n_paths, np.nan)
    exit_side = np.full(n_paths, -1)
    ids = np.arange(n_paths)
    edge = edge_out.copy()
    h = h_out.copy()

    def shell(idx, h_new, u, levels, branches):
        vb = branches[edge[idx]]
        refl = idx[vb < 0]
        h_new[refl] = 2 * levels[edge[refl]] - h_new[refl]
        for vid in np.unique(vb[vb >= 0]):
            sel = idx[vb == vid]
            e_ids, cum, val, sgn = branch[vid]
            pick = np.minimum(np.searchsorted(cum, u[sel], side="right"), len(e_ids) - 1)
            edge[sel] = e_ids[pick]
            h_new[sel] = val + sgn[pick] * delta_v

    rec_h, rec_e, rec_t = [], [], []

    def snapshot(t):
        edge_out[ids] = edge
        h_out[ids] = h
        rec_h.append(h_out.copy())
        rec_e.append(edge_out.copy())
        rec_t.append(t)

    if record_every:
        snapshot(0.0)
    for step in range(n_steps):
        if ids.size == 0:
            break
        xi = rng.normal(ids.size)
        u = rng.uniform(ids.size)
        a, b = tab.lookup(edge, h)
        h_new = h + b * dt + np.sqrt(a) * sq * xi
        done = np.zeros(ids.size, bool)
        if absorbing:
            # Brownian-bridge test: probability that the step crossed a cut between the two endpoints
            u_b = rng.uniform(ids.size)
        for k, (ae, ah) in enumerate(absorbing):
            on = edge == ae
            d0, d1 = h - ah, h_new - ah
            same = d0 * d1 > 0
            var = np.maximum(a * dt, 1e-300)
            bridge = same & (u_b < np.exp(-2.0 * d0 * d1 / var))
            crossed = np.flatnonzero(on & (~same | bridge) & ~done)
            if crossed.size:
                dh = h_new[crossed] - h[crossed]
                frac = np.where(same[crossed], 1.0, (ah - h[crossed]) / np.where(dh != 0, dh, 1.0))
                exit_time[ids[crossed]] = (step + np.clip(frac, 0, 1)) * dt
                exit_side[ids[crossed]] = k
                h_new[crossed] = ah
                if stop_when_absorbed:
                    done[crossed] = True
        below = np.flatnonzero((h_new < lo_lvl[edge]) & ~done)
        if below.size:
            shell(below, h_new, u, lo_lvl, lo_branch)
        above = np.flatnonzero((h_new > hi_lvl[edge]) & ~done)
        if above.size:
            shell(above, h_new, u, hi_lvl, hi_branch)
        h = h_new
        if done.any():
            edge_out[ids[done]] = edge[done]
            h_out[ids[done]] = h[done]
            keep = ~done
            ids, edge, h = ids[keep], edge[keep], h[keep]
        if record_every and (step + 1) % record_every == 0:
            snapshot((step + 1) * dt)
    edge_out[ids] = edge
    h_out[ids] = h
    res = SimulationResult(edge_out, h_out, exit_time, exit_side)
    if record_every:
        res.times = np.asarray(rec_t)
        res.h_history = np.stack(rec_h)
        res.edge_history = np.stack(rec_e)
    return res
