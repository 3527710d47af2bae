"""
Reeb graphs of planar Hamiltonians and averaged coefficients
============================================================

For ``H: R^2 -> R`` with ``H -> inf`` at infinity, the connected components
of the level sets form a tree ``Gamma``: minima are leaves, saddles have
degree three and one edge is unbounded. On each edge, averaging over the
fast rotation along a level curve ``C(z)`` gives

    T(z) = oint dl / |grad H|                (period)
    A(z) = oint a grad H . grad H / |grad H| dl = int_{G(z)} div(a grad H) dx
    B(z) = oint beta . grad H / |grad H| dl  = int_{G(z)} div(beta) dx

where ``G(z)`` is the region enclosed by ``C(z)``. The averaged coefficients
are ``abar = A / T`` and ``betabar = B / T``. The slow process ``H(X_t)``
has generator ``(1 / (2T)) (A u')' + (B / T) u'``: its drift
``(A'/2 + B) / T`` includes the Ito term coming from the noise, which is
why ``A' = oint div(a grad H) / |grad H| dl`` is tabulated as well.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from skimage import measure

from .field_dsl import FieldDef, Num, diff, scalar_field, simplify

__all__ = [
    "ScalarField2D", "Vertex", "Edge", "ReebGraph", "EdgeCoefficients", "GluingData",
    "ReebError", "build_reeb_graph", "extract_contour", "contour_integrals",
    "edge_coefficients", "gluing_coefficients", "branching_weights", "area_integral",
    "project_Y", "graph_json", "load_graph_json", "divergence_of_flux",
]


class ReebError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Field

class ScalarField2D:
    """A Hamiltonian on a box with its analytic gradient and Hessian.

    ``values[j, i] = H(x[i], y[j])`` on an ``nx`` by ``ny`` grid.
    """

    def __init__(self, H: FieldDef, box, nx: int = 512, ny: int | None = None):
        if H.arity != 2 or H.dim != 1:
            raise ReebError("H must be a scalar field of two variables")
        self.H = H
        self.box = tuple(float(b) for b in box)
        self.nx = int(nx)
        self.ny = int(ny or nx)
        x0, x1, y0, y1 = self.box
        self.x = np.linspace(x0, x1, self.nx)
        self.y = np.linspace(y0, y1, self.ny)
        self.hx = self.x[1] - self.x[0]
        self.hy = self.y[1] - self.y[0]
        X, Y = np.meshgrid(self.x, self.y)
        self.points = np.stack([X, Y], axis=-1)
        self.values = H.scalar(self.points)
        self.grad_field = H.jacobian("gradH")  # shape (1, 2)
        self.hess_field = self.grad_field.jacobian("hessH")  # shape (1, 2, 2)
        self._basins = None

    @classmethod
    def from_source(cls, source, box, nx=512, ny=None, variables=("x1", "x2")):
        return cls(scalar_field(source, variables, "H"), box, nx, ny)

    def __call__(self, pts):
        return self.H.scalar(np.asarray(pts, float))

    def gradient(self, pts):
        g = self.grad_field(np.asarray(pts, float))
        return g[..., 0, :]

    def hessian(self, pts):
        return self.hess_field(np.asarray(pts, float))[..., 0, :, :]

    def boundary_min(self):
        v = self.values
        return float(min(v[0].min(), v[-1].min(), v[:, 0].min(), v[:, -1].min()))

    def source(self):
        return self.H.sources()[0]

    def coarse(self, n):
        if n >= self.nx and n >= self.ny:
            return self
        return ScalarField2D(self.H, self.box, min(n, self.nx), min(n, self.ny))


# ---------------------------------------------------------------------------
# Graph

@dataclass
class Vertex:
    id: int
    kind: str  # "minimum" | "saddle"
    position: tuple
    value: float


@dataclass
class Edge:
    id: int
    lo: int  # vertex at the lower end
    hi: int | None  # vertex at the upper end; None for the unbounded edge
    z_lo: float
    z_hi: float  # inf for the unbounded edge
    minima: tuple  # ids of the minima below this edge

    @property
    def unbounded(self):
        return self.hi is None


@dataclass
class ReebGraph:
    vertices: list
    edges: list
    cap: float | None = None  # truncation level of the unbounded edge

    def incident(self, vid):
        return [e for e in self.edges if e.lo == vid or e.hi == vid]

    def degree(self, vid):
        return len(self.incident(vid))

    def minima(self):
        return [v for v in self.vertices if v.kind == "minimum"]

    def saddles(self):
        return [v for v in self.vertices if v.kind == "saddle"]

    def unbounded_edge(self):
        return next(e for e in self.edges if e.unbounded)

    def edge_upper(self, eid):
        e = self.edges[eid]
        return self.cap if e.unbounded else e.z_hi

    def edge_for(self, minimum, h):
        """The edge alive at level ``h`` that lies above ``minimum``."""
        best = None
        for e in self.edges:
            if minimum in e.minima and e.z_lo <= h and (h < e.z_hi or e.unbounded):
                if best is None or e.z_lo > best.z_lo:
                    best = e
        if best is None:
            raise ReebError(f"no edge above minimum {minimum} at level {h}")
        return best.id

    def is_tree(self):
        return len(self.edges) == len(self.vertices)  # one unbounded edge, no far vertex

    def check_degrees(self):
        for v in self.vertices:
            want = 1 if v.kind == "minimum" else 3
            if self.degree(v.id) != want:
                return False
        return True

    def to_dict(self):
        return {
            "vertices": [{"id": v.id, "kind": v.kind, "position": list(v.position), "value": v.value}
                         for v in self.vertices],
            "edges": [{"id": e.id, "lo": e.lo, "hi": e.hi, "z_lo": e.z_lo,
                       "z_hi": None if np.isinf(e.z_hi) else e.z_hi, "minima": list(e.minima)}
                      for e in self.edges],
            "cap": self.cap,
        }

    @classmethod
    def from_dict(cls, d):
        vs = [Vertex(v["id"], v["kind"], tuple(v["position"]), v["value"]) for v in d["vertices"]]
        es = [Edge(e["id"], e["lo"], e["hi"], e["z_lo"], np.inf if e["z_hi"] is None else e["z_hi"],
                   tuple(e["minima"])) for e in d["edges"]]
        return cls(vs, es, d.get("cap"))


def _neighbors6(n_x, n_y):
    """Offsets of the 6-neighbourhood of a triangulated grid (diagonal (+1,+1))."""
    return [(0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (-1, -1)]


def _newton_critical(field, p, iters=50):
    x = np.asarray(p, float)
    for _ in range(iters):
        g = field.gradient(x)
        Hm = field.hessian(x)
        try:
            step = np.linalg.solve(Hm, g)
        except np.linalg.LinAlgError:
            raise ReebError(f"degenerate critical point near {p}")
        x = x - step
        if np.linalg.norm(step) < 1e-13:
            break
    if np.linalg.norm(field.gradient(x)) > 1e-8:
        raise ReebError(f"critical point refinement failed near {p}")
    return x


def build_reeb_graph(field: ScalarField2D, cap: float | None = None, topology_n: int = 160,
                     persistence: float | None = None, det_tol: float = 1e-8,
                     value_tol: float = 1e-7) -> ReebGraph:
    """Join tree of the sublevel sets by a union-find sweep.

    The sweep runs on a triangulated grid of at most ``topology_n`` points a
    side, up to the lowest boundary value. Pairs with persistence below
    ``persistence`` are discarded as grid noise. Critical points are then
    refined by Newton's method on the analytic gradient.
    """
    g = field.coarse(topology_n)
    v = g.values
    ny, nx = v.shape
    flat = v.ravel()
    span = float(flat.max() - flat.min())
    if persistence is None:
        persistence = 1e-6 * span
    stop = g.boundary_min()
    _reject_maxima(v)
    order = np.argsort(flat, kind="stable")
    parent = np.full(flat.size, -1, dtype=np.int64)

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    birth = {}  # root -> (birth value, lowest grid index)
    arc = {}  # root -> lower vertex key of the open arc
    raw_vertices = {}  # key -> (kind, grid index)
    raw_edges = []  # (lower key, upper key)
    offs = _neighbors6(nx, ny)
    for idx in order:
        val = flat[idx]
        if val >= stop:
            break
        j, i = divmod(int(idx), nx)
        roots = set()
        for dj, di in offs:
            jj, ii = j + dj, i + di
            if 0 <= jj < ny and 0 <= ii < nx:
                nb = jj * nx + ii
                if parent[nb] >= 0:
                    roots.add(find(nb))
        parent[idx] = idx
        if not roots:
            key = ("m", int(idx))
            raw_vertices[key] = ("minimum", int(idx))
            birth[idx] = (val, int(idx))
            arc[idx] = key
            continue
        roots = sorted(roots, key=lambda r: birth[r])
        elder = roots[0]
        alive = [elder] + [r for r in roots[1:] if val - birth[r][0] >= persistence]
        for r in roots[1:]:
            if r not in alive:
                # noise: the younger component dies silently together with its minimum
                _drop_branch(raw_vertices, raw_edges, arc[r])
        if len(alive) > 1:
            key = ("s", int(idx))
            raw_vertices[key] = ("saddle", int(idx))
            for r in alive:
                raw_edges.append((arc[r], key))
        for r in roots:
            parent[r] = elder
        parent[idx] = elder
        if len(alive) > 1:
            arc[elder] = key
    tops = {find(int(i)) for i in np.flatnonzero(parent >= 0)}
    if len(tops) != 1:
        raise ReebError("sublevel set not connected below the boundary level; enlarge the box")
    top = tops.pop()
    raw_edges.append((arc[top], None))
    return _assemble(field, g, raw_vertices, raw_edges, cap, det_tol, value_tol, stop)


def _drop_branch(raw_vertices, raw_edges, key):
    """Remove a noise minimum (and anything hanging below it)."""
    stack = [key]
    while stack:
        k = stack.pop()
        raw_vertices.pop(k, None)
        below = [e for e in raw_edges if e[1] == k]
        for e in below:
            raw_edges.remove(e)
            stack.append(e[0])


def _reject_maxima(v):
    c = v[1:-1, 1:-1]
    nbrs = [v[1:-1, 2:], v[1:-1, :-2], v[2:, 1:-1], v[:-2, 1:-1], v[2:, 2:], v[:-2, :-2]]
    is_max = np.all([c > n for n in nbrs], axis=0)
    if np.any(is_max):
        j, i = np.argwhere(is_max)[0]
        raise ReebError(f"interior local maximum near grid node ({i + 1}, {j + 1}); "
                        "only minima and saddles are supported")


def _assemble(field, g, raw_vertices, raw_edges, cap, det_tol, value_tol, stop):
    nx = g.values.shape[1]
    keys = sorted(raw_vertices, key=lambda k: g.values.ravel()[raw_vertices[k][1]])
    refined = {}
    for k in keys:
        kind, idx = raw_vertices[k]
        j, i = divmod(idx, nx)
        p = _newton_critical(field, (g.x[i], g.y[j]))
        det = float(np.linalg.det(field.hessian(p)))
        if abs(det) < det_tol:
            raise ReebError(f"degenerate critical point at {p}")
        if (kind == "minimum") != (det > 0):
            raise ReebError(f"critical point at {p} does not have the expected type {kind}")
        refined[k] = (kind, p, float(field(p)))
    sad_vals = sorted(val for kind, _, val in refined.values() if kind == "saddle")
    span = max(abs(stop), 1.0)
    for a, b in zip(sad_vals, sad_vals[1:]):
        if b - a < value_tol * span:
            raise ReebError("two saddles share a critical value within resolution")
    order = sorted(refined, key=lambda k: (refined[k][2], refined[k][1][0], refined[k][1][1]))
    vid = {k: n for n, k in enumerate(order)}
    vertices = [Vertex(vid[k], refined[k][0], tuple(map(float, refined[k][1])), refined[k][2]) for k in order]
    for lo, hi in raw_edges:
        if hi is not None and refined[lo][2] >= refined[hi][2]:
            raise ReebError("edge with non-increasing critical values; refine the grid")
    minima_below = {}
    for k in order:
        if refined[k][0] == "minimum":
            minima_below[k] = (vid[k],)
        else:
            mins = []
            for lo, hi in raw_edges:
                if hi == k:
                    mins.extend(minima_below[lo])
            minima_below[k] = tuple(sorted(mins))
    crit_max = max(v.value for v in vertices)
    crit_min = min(v.value for v in vertices)
    if cap is None:
        room = field.boundary_min() - crit_max
        span = crit_max - crit_min
        cap = crit_max + (min(2.0 * span, 0.9 * room) if span > 0 else 0.5 * room)
    if cap >= field.boundary_min():
        raise ReebError(f"cap {cap} reaches the box boundary (boundary min {field.boundary_min()})")
    if crit_max >= field.boundary_min():
        raise ReebError("critical values must lie below the boundary values")
    edges = []
    for lo, hi in raw_edges:
        z_lo = refined[lo][2]
        z_hi = np.inf if hi is None else refined[hi][2]
        edges.append((z_lo, vertices[vid[lo]].position[0], vid[lo],
                      None if hi is None else vid[hi], z_hi, minima_below[lo]))
    edges.sort(key=lambda e: (e[0], e[1], e[4]))
    out = [Edge(n, e[2], e[3], e[0], e[4], e[5]) for n, e in enumerate(edges)]
    return ReebGraph(vertices, out, float(cap))


# ---------------------------------------------------------------------------
# Contours

def _polygon_contains(poly, pts):
    px, py = pts[:, 0], pts[:, 1]
    res = np.zeros(len(pts), bool)
    x1, y1 = poly[:-1, 0], poly[:-1, 1]
    x2, y2 = poly[1:, 0], poly[1:, 1]
    for a, b, c, d in zip(x1, y1, x2, y2):
        cond = (b > py) != (d > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = a + (py - b) * (c - a) / (d - b)
        res ^= cond & (px < xint)
    return res


def _project_to_level(field, pts, z, iters=3):
    p = pts.copy()
    for _ in range(iters):
        gr = field.gradient(p)
        g2 = np.sum(gr * gr, axis=-1)
        ok = g2 > 1e-16
        r = field(p) - z
        p[ok] -= (r[ok] / g2[ok])[:, None] * gr[ok]
    return p


def extract_contour(field: ScalarField2D, z: float, edge: Edge, graph: ReebGraph,
                    project: bool = True) -> np.ndarray:
    """Closed polyline of the level-set component ``C(z)`` belonging to ``edge``.

    The component is the closed contour that encloses exactly the minima
    below the edge among those lying below ``z``.
    """
    if not z > edge.z_lo or (not edge.unbounded and not z < edge.z_hi):
        raise ReebError(f"level {z} outside edge {edge.id} range")
    for v in graph.vertices:
        if abs(z - v.value) < 1e-12 * max(1.0, abs(z)):
            raise ReebError(f"level {z} is a critical value")
    mins = [v for v in graph.minima() if v.value < z]
    mpos = np.array([v.position for v in mins])
    want = np.array([v.id in edge.minima for v in mins])
    for c in measure.find_contours(field.values, z):
        if len(c) < 4 or np.linalg.norm(c[0] - c[-1]) > 1e-9:
            continue
        xy = np.column_stack([field.x[0] + c[:, 1] * field.hx, field.y[0] + c[:, 0] * field.hy])
        inside = _polygon_contains(xy, mpos)
        if np.array_equal(inside, want):
            if project:
                xy = _project_to_level(field, xy, z)
                xy[-1] = xy[0]
            return xy
    raise ReebError(f"no closed contour for edge {edge.id} at level {z}")


def divergence_of_flux(H: FieldDef, a: FieldDef | None):
    """Symbolic div(a grad H) as a scalar field."""
    var = H.variables
    h = H.components[0]
    gH = [diff(h, v) for v in var]
    total = Num(0.0)
    for i, vi in enumerate(var):
        if a is None:
            flux = gH[i]
        else:
            flux = Num(0.0)
            for j in range(len(var)):
                flux = flux + a.components[i * len(var) + j] * gH[j]
        total = total + diff(simplify(flux), vi)
    return FieldDef.from_exprs("div_a_gradH", var, [simplify(total)], (1,))


def contour_integrals(field, poly, a=None, beta=None, div_flux=None, grad_floor=1e-8):
    """Midpoint-rule contour integrals (T, A, A', B) along a closed polyline."""
    seg = np.diff(poly, axis=0)
    length = np.linalg.norm(seg, axis=1)
    mid = 0.5 * (poly[1:] + poly[:-1])
    gr = field.gradient(mid)
    ng = np.linalg.norm(gr, axis=1)
    if np.any(ng < grad_floor):
        raise ReebError("|grad H| below floor on the contour (too close to a critical point)")
    w = length / ng
    T = float(np.sum(w))
    if a is None:
        agg = ng * ng
    else:
        am = a(mid)
        agg = np.einsum("ki,kij,kj->k", gr, am, gr)
    A = float(np.sum(w * agg))
    B = 0.0 if beta is None else float(np.sum(w * np.sum(beta(mid) * gr, axis=1)))
    dA = np.nan if div_flux is None else float(np.sum(w * div_flux.scalar(mid)))
    return T, A, dA, B


@dataclass
class EdgeCoefficients:
    """Tables on one edge. ``A = T abar``, ``B = T betabar``, ``dA = A'``."""

    edge: int
    z: np.ndarray
    T: np.ndarray
    A: np.ndarray
    dA: np.ndarray
    B: np.ndarray
    z_range: tuple = (None, None)  # full edge range the tables are extrapolated to

    @property
    def abar(self):
        return self.A / self.T

    @property
    def betabar(self):
        return self.B / self.T

    @property
    def drift(self):
        """Drift of the slow variable, ``(A'/2 + B) / T``."""
        return (0.5 * self.dA + self.B) / self.T

    def interp(self, name, h):
        """Linear interpolation, linear extrapolation outside the table."""
        vals = getattr(self, name)
        z = self.z
        h = np.asarray(h, float)
        out = np.interp(h, z, vals)
        lo = h < z[0]
        hi = h > z[-1]
        if np.any(lo):
            s = (vals[1] - vals[0]) / (z[1] - z[0])
            out = np.where(lo, vals[0] + s * (h - z[0]), out)
        if np.any(hi):
            s = (vals[-1] - vals[-2]) / (z[-1] - z[-2])
            out = np.where(hi, vals[-1] + s * (h - z[-1]), out)
        return out

    @classmethod
    def hand_built(cls, edge, z, abar, betabar, dabar=None):
        """Tables for a prescribed operator ``abar/2 u'' + betabar u'`` (period 1)."""
        z = np.asarray(z, float)
        abar = np.broadcast_to(np.asarray(abar, float), z.shape).copy()
        betabar = np.broadcast_to(np.asarray(betabar, float), z.shape).copy()
        if dabar is None:
            dabar = np.gradient(abar, z) if len(z) > 2 else np.zeros_like(z)
        dabar = np.broadcast_to(np.asarray(dabar, float), z.shape).copy()
        return cls(edge, z, np.ones_like(z), abar, dabar, betabar - 0.5 * dabar, (z[0], z[-1]))

    def to_dict(self):
        return {"edge": self.edge, "z": self.z.tolist(), "T": self.T.tolist(), "A": self.A.tolist(),
                "dA": self.dA.tolist(), "B": self.B.tolist(),
                "abar": self.abar.tolist(), "betabar": self.betabar.tolist(),
                "z_range": list(self.z_range)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["edge"], np.asarray(d["z"]), np.asarray(d["T"]), np.asarray(d["A"]),
                   np.asarray(d["dA"]), np.asarray(d["B"]), tuple(d["z_range"]))


def edge_levels(graph, edge, n=40, rel_gap=1e-3, cap=None):
    """Default z-grid: n levels, staying ``rel_gap`` of the span away from the ends."""
    z_lo = edge.z_lo
    z_hi = (cap if cap is not None else graph.cap) if edge.unbounded else edge.z_hi
    gap = rel_gap * (z_hi - z_lo)
    return np.linspace(z_lo + gap, z_hi - (0 if edge.unbounded else gap), n)


def edge_coefficients(field: ScalarField2D, graph: ReebGraph, edge_id: int, a: FieldDef | None = None,
                      beta: FieldDef | None = None, z_grid=None, n: int = 40) -> EdgeCoefficients:
    """Tabulate T, A, A', B on an edge by contour integration."""
    edge = graph.edges[edge_id]
    if z_grid is None:
        z_grid = edge_levels(graph, edge, n)
    z_grid = np.asarray(z_grid, float)
    div_flux = divergence_of_flux(field.H, a)
    rows = []
    for z in z_grid:
        poly = extract_contour(field, z, edge, graph)
        rows.append(contour_integrals(field, poly, a, beta, div_flux))
    T, A, dA, B = map(np.asarray, zip(*rows))
    upper = graph.cap if edge.unbounded else edge.z_hi
    return EdgeCoefficients(edge_id, z_grid, T, A, dA, B, (edge.z_lo, upper))


@dataclass
class GluingData:
    vertex: int
    gamma: dict  # edge id -> gamma
    sign: dict  # edge id -> +1 if the edge lies above the vertex, -1 below
    alpha: float = 0.0

    def to_dict(self):
        return {"vertex": self.vertex, "gamma": {str(k): v for k, v in self.gamma.items()},
                "sign": {str(k): v for k, v in self.sign.items()}, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d):
        return cls(d["vertex"], {int(k): v for k, v in d["gamma"].items()},
                   {int(k): v for k, v in d["sign"].items()}, d.get("alpha", 0.0))


def _side_integral(field, graph, edge, vertex, delta, fn):
    s = 1 if edge.lo == vertex.id else -1
    z = vertex.value + s * delta
    poly = extract_contour(field, z, edge, graph)
    return fn(poly), s


def gluing_coefficients(field: ScalarField2D, graph: ReebGraph, vertex_id: int,
                        a: FieldDef | None = None, delta: float | None = None) -> GluingData:
    """gamma_j = oint a grad H . grad H / |grad H| dl on each side of a saddle.

    Evaluated at ``z_saddle +- delta`` and ``+- delta/2`` and combined by
    Richardson extrapolation.
    """
    vertex = graph.vertices[vertex_id]
    if vertex.kind != "saddle":
        raise ReebError("gluing coefficients are defined at saddles")
    inc = graph.incident(vertex_id)
    if delta is None:
        spans = [(graph.cap if e.unbounded else e.z_hi) - e.z_lo for e in inc]
        delta = 0.02 * min(spans)
    gamma, sign = {}, {}

    def fn(poly):
        return contour_integrals(field, poly, a, None, None)[1]

    for e in inc:
        g1, s = _side_integral(field, graph, e, vertex, delta, fn)
        g2, _ = _side_integral(field, graph, e, vertex, delta / 2, fn)
        gamma[e.id] = 2.0 * g2 - g1
        sign[e.id] = s
    return GluingData(vertex_id, gamma, sign, 0.0)


def branching_weights(field: ScalarField2D, graph: ReebGraph, vertex_id: int, beta: FieldDef,
                      delta: float | None = None) -> dict:
    """Deterministic branching at a saddle for a dissipative ``beta``.

    Weights of the lower edges are proportional to ``|B_j|`` just below the
    saddle, i.e. to ``int_{G_j} |div beta| dx`` when ``div beta`` keeps its sign.
    """
    vertex = graph.vertices[vertex_id]
    lower = [e for e in graph.incident(vertex_id) if e.hi == vertex_id]
    if delta is None:
        delta = 0.02 * min(e.z_hi - e.z_lo for e in lower)

    def fn(poly):
        return contour_integrals(field, poly, None, beta, None)[3]

    raw = {}
    for e in lower:
        b1, _ = _side_integral(field, graph, e, vertex, delta, fn)
        b2, _ = _side_integral(field, graph, e, vertex, delta / 2, fn)
        raw[e.id] = abs(2.0 * b2 - b1)
    tot = sum(raw.values())
    return {k: v / tot for k, v in raw.items()}


# ---------------------------------------------------------------------------
# Basins, area integrals and the projection Y

def basin_labels(field: ScalarField2D, graph: ReebGraph) -> np.ndarray:
    """Minimum id reached by discrete steepest descent from each grid node."""
    if field._basins is not None:
        return field._basins
    v = field.values
    ny, nx = v.shape
    pad = np.pad(v, 1, constant_values=np.inf)
    idx = np.arange(nx * ny).reshape(ny, nx)
    pidx = np.pad(idx, 1, constant_values=-1)
    best_val = v.copy()
    best_idx = idx.copy()
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            if dj == 0 and di == 0:
                continue
            nv = pad[1 + dj:1 + dj + ny, 1 + di:1 + di + nx]
            ni = pidx[1 + dj:1 + dj + ny, 1 + di:1 + di + nx]
            better = nv < best_val
            best_val = np.where(better, nv, best_val)
            best_idx = np.where(better, ni, best_idx)
    ptr = best_idx.ravel()
    while True:
        nxt = ptr[ptr]
        if np.array_equal(nxt, ptr):
            break
        ptr = nxt
    roots = np.unique(ptr)
    mins = graph.minima()
    mpos = np.array([m.position for m in mins])
    root_xy = np.column_stack([field.x[roots % nx], field.y[roots // nx]])
    d = np.linalg.norm(root_xy[:, None, :] - mpos[None], axis=-1)
    root_label = np.array([mins[k].id for k in np.argmin(d, axis=1)])
    lut = dict(zip(roots.tolist(), root_label.tolist()))
    labels = np.vectorize(lut.__getitem__)(ptr).reshape(ny, nx)
    field._basins = labels
    return labels


def area_integral(field: ScalarField2D, graph: ReebGraph, f: FieldDef, edge_id: int, z: float) -> float:
    """int over the region G(z) enclosed by the edge's level curve, cell-sum quadrature."""
    edge = graph.edges[edge_id]
    labels = basin_labels(field, graph)
    mask = (field.values < z) & np.isin(labels, edge.minima)
    vals = f.scalar(field.points)
    return float(np.sum(vals[mask]) * field.hx * field.hy)


def project_Y(field: ScalarField2D, graph: ReebGraph, x):
    """Map points to graph coordinates ``(h, edge id)``.

    The edge is found from the basin of the nearest grid node: steepest
    descent from x stays inside its sublevel component.
    """
    pts = np.atleast_2d(np.asarray(x, float))
    h = field(pts)
    labels = basin_labels(field, graph)
    i = np.clip(np.rint((pts[:, 0] - field.x[0]) / field.hx).astype(int), 0, field.nx - 1)
    j = np.clip(np.rint((pts[:, 1] - field.y[0]) / field.hy).astype(int), 0, field.ny - 1)
    mins = labels[j, i]
    edges = np.array([graph.edge_for(int(m), float(hh)) for m, hh in zip(mins, h)])
    if np.ndim(x) == 1:
        return float(h[0]), int(edges[0])
    return h, edges


# ---------------------------------------------------------------------------
# Serialization

def graph_json(graph: ReebGraph, coefficients=(), gluing=(), extra=None) -> str:
    doc = {"graph": graph.to_dict(),
           "coefficients": [c.to_dict() for c in coefficients],
           "gluing": [g.to_dict() for g in gluing]}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2)


def load_graph_json(text: str):
    doc = json.loads(text)
    graph = ReebGraph.from_dict(doc["graph"])
    coeffs = [EdgeCoefficients.from_dict(c) for c in doc.get("coefficients", [])]
    gluing = [GluingData.from_dict(g) for g in doc.get("gluing", [])]
    return graph, coeffs, gluing
