"""
Action functional and quasipotentials
=====================================

The normalized action of a path phi on [0, T] is

    S(phi) = 1/2 int (a^{-1}(phi) (phi' - b(phi))) . (phi' - b(phi)) ds,

discretized with the midpoint rule on N uniform segments. Minimizing it over
paths and over a geometric grid of durations gives transition exponents
between attractors and the quasipotential of a point.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import DiffusionSpec
from .field_dsl import FieldDef

__all__ = [
    "PathDiscretization", "QuasipotentialResult", "Point", "Ball", "Polyline",
    "SingularDiffusionError", "action", "action_and_gradient", "minimize_action",
    "v_matrix", "quasipotential_1d", "quasipotential_point", "quasipotential_boundary",
    "path_csv", "v_matrix_json",
]


class SingularDiffusionError(ValueError):
    pass


@dataclass
class PathDiscretization:
    points: np.ndarray
    T: float
    fixed_start: bool = True
    fixed_end: bool = True

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, float))
        if len(self.points) < 3:
            raise ValueError("a path needs N >= 2 segments")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def N(self):
        return len(self.points) - 1

    @classmethod
    def straight(cls, x, y, T, N=200):
        s = np.linspace(0.0, 1.0, N + 1)[:, None]
        x, y = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float))
        return cls(x + s * (y - x), T)


# ---------------------------------------------------------------------------
# Diffusion matrix helpers

class _Metric:
    """a^{-1}(x) and its derivatives for a spec."""

    def __init__(self, spec: DiffusionSpec):
        self.spec = spec
        n = spec.dim
        if spec.sigma_constant is not None:
            a = spec.sigma_constant @ spec.sigma_constant.T
            self.const = _inverse(a[None])[0]
            self.sig_jac = None
        else:
            self.const = None
            if not isinstance(spec.sigma, FieldDef):
                raise TypeError("state-dependent sigma must be a FieldDef for the action gradient")
            self.sig_jac = spec.sigma.jacobian()
        self.n = n

    def inverse(self, m):
        if self.const is not None:
            return np.broadcast_to(self.const, m.shape[:-1] + (self.n, self.n))
        return _inverse(self.spec.diffusion_matrix(m))

    def inverse_derivative(self, m, ainv):
        """d(a^{-1})/dx_l at m, shape (..., l, n, n)."""
        if self.const is not None:
            return None
        s = self.spec.sigma(m)
        ds = self.sig_jac(m)  # (..., n, n, l)
        ds = np.moveaxis(ds, -1, -3)  # (..., l, n, n)
        st = np.swapaxes(s, -1, -2)[..., None, :, :]
        da = ds @ st + s[..., None, :, :] @ np.swapaxes(ds, -1, -2)
        A = ainv[..., None, :, :]
        return -A @ da @ A


def _inverse(a):
    n = a.shape[-1]
    if n > 4:
        raise SingularDiffusionError("diffusion matrices above dimension 4 are not supported")
    det = np.linalg.det(a)
    scale = np.max(np.abs(a), axis=(-1, -2))
    if np.any(~np.isfinite(det)) or np.any(np.abs(det) <= 1e-14 * np.maximum(scale, 1e-300) ** n):
        raise SingularDiffusionError("diffusion matrix a = sigma sigma^T is singular on the path")
    return np.linalg.inv(a)


def _drift_jacobian(spec):
    f = spec.drift
    if isinstance(f, FieldDef):
        return f.jacobian()

    def fd(x, h=1e-6):
        cols = []
        for i in range(spec.dim):
            e = np.zeros(spec.dim)
            e[i] = h
            cols.append((f(x + e) - f(x - e)) / (2 * h))
        return np.stack(cols, axis=-1)
    return fd


# ---------------------------------------------------------------------------
# Action

def action(spec: DiffusionSpec, path: PathDiscretization) -> float:
    """Midpoint-rule action of a discrete path (drift ``b`` only)."""
    return float(action_and_gradient(spec, path.points, path.T, need_grad=False)[0])


def action_and_gradient(spec: DiffusionSpec, points, T, need_grad=True, _cache=None):
    pts = np.asarray(points, float)
    N = len(pts) - 1
    ds = T / N
    metric = _cache["metric"] if _cache else _Metric(spec)
    m = 0.5 * (pts[1:] + pts[:-1])
    v = np.diff(pts, axis=0) / ds
    r = v - spec.drift(m)
    ainv = metric.inverse(m)
    Ar = np.einsum("kij,kj->ki", ainv, r)
    S = 0.5 * ds * np.sum(Ar * r)
    if not need_grad:
        return S, None
    jac = (_cache["jac"] if _cache else _drift_jacobian(spec))(m)  # (k, i, j) = d b_i / d x_j
    g = ds * Ar  # dS/dr_k
    # dr_k/dphi_{k+1} = I/ds - J/2, dr_k/dphi_k = -I/ds - J/2
    gJ = np.einsum("ki,kij->kj", g, jac)
    grad = np.zeros_like(pts)
    grad[1:] += g / ds - 0.5 * gJ
    grad[:-1] += -g / ds - 0.5 * gJ
    dA = metric.inverse_derivative(m, ainv)
    if dA is not None:
        q = 0.25 * ds * np.einsum("ki,klij,kj->kl", r, dA, r)
        grad[1:] += q
        grad[:-1] += q
    return S, grad


# ---------------------------------------------------------------------------
# Endpoint sets

@dataclass(frozen=True)
class Point:
    x: tuple

    @property
    def center(self):
        return np.atleast_1d(np.asarray(self.x, float))

    def project(self, p):
        return self.center

    @property
    def free(self):
        return False


@dataclass(frozen=True)
class Ball:
    x: tuple
    radius: float

    @property
    def center(self):
        return np.atleast_1d(np.asarray(self.x, float))

    def project(self, p):
        c = self.center
        d = p - c
        r = np.linalg.norm(d)
        return p if r <= self.radius else c + d * (self.radius / r)

    @property
    def free(self):
        return self.radius > 0


@dataclass(frozen=True)
class Polyline:
    """A closed polygonal curve; endpoints constrained to lie on it."""

    vertices: tuple

    @property
    def center(self):
        return np.mean(np.asarray(self.vertices, float), axis=0)

    def project(self, p):
        v = np.asarray(self.vertices, float)
        a, b = v, np.roll(v, -1, axis=0)
        d = b - a
        t = np.clip(np.sum((p - a) * d, axis=1) / np.maximum(np.sum(d * d, axis=1), 1e-300), 0, 1)
        q = a + t[:, None] * d
        return q[np.argmin(np.linalg.norm(q - p, axis=1))]

    def samples(self, k):
        v = np.asarray(self.vertices, float)
        closed = np.vstack([v, v[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        cum = np.concatenate([[0], np.cumsum(seg)])
        s = np.linspace(0, cum[-1], k, endpoint=False)
        return np.stack([np.interp(s, cum, closed[:, i]) for i in range(v.shape[1])], axis=1)

    @property
    def free(self):
        return True


def _as_set(s):
    if isinstance(s, (Point, Ball, Polyline)):
        return s
    return Point(tuple(np.atleast_1d(np.asarray(s, float))))


# ---------------------------------------------------------------------------
# Minimization

@dataclass
class QuasipotentialResult:
    value: float
    path: np.ndarray
    T: float
    iterations: int
    grad_norm: float
    T_grid: np.ndarray
    T_values: np.ndarray
    converged: bool
    history: list = field(default_factory=list, repr=False)
    degenerate: bool = False

    def to_dict(self):
        return {
            "value": self.value, "T": self.T, "iterations": self.iterations,
            "grad_norm": self.grad_norm, "converged": self.converged,
            "degenerate": self.degenerate,
            "T_grid": list(map(float, self.T_grid)), "T_values": list(map(float, self.T_values)),
        }


def _descend(spec, pts, T, start, end, iters, tol, cache, perturb=None):
    """Nesterov gradient descent with restarts, keeping the best iterate."""
    N = len(pts) - 1
    ds = T / N
    ainv_max = float(np.max(np.abs(cache["metric"].inverse(pts[:1]))))
    lr = ds / (4.0 * max(ainv_max, 1e-12))
    x = pts.copy()
    x[0], x[-1] = start.project(x[0]), end.project(x[-1])
    y = x.copy()
    S_best, g = action_and_gradient(spec, x, T, _cache=cache)
    best = x.copy()
    gnorm = np.inf
    history = [S_best]
    prev = x.copy()
    k_mom = 0
    it = 0
    for it in range(1, iters + 1):
        S_y, g = action_and_gradient(spec, y, T, _cache=cache)
        if not start.free:
            g[0] = 0.0
        if not end.free:
            g[-1] = 0.0
        gnorm = float(np.sqrt(np.sum(g * g) / ds))
        if gnorm < tol:
            if S_y <= S_best:
                S_best, best = S_y, y.copy()
            break
        x_new = y - lr * g
        x_new[0] = start.project(x_new[0])
        x_new[-1] = end.project(x_new[-1])
        S_new, _ = action_and_gradient(spec, x_new, T, need_grad=False, _cache=cache)
        if not np.isfinite(S_new) or S_new > S_y + 1e-14 * (1 + abs(S_y)):
            # overshoot: shrink the step and restart momentum from the best point
            if S_new > 10 * (S_y + 1) or not np.isfinite(S_new):
                lr *= 0.5
            y = best.copy()
            prev = best.copy()
            k_mom = 0
            continue
        if S_new < S_best:
            S_best, best = S_new, x_new.copy()
        history.append(S_best)
        k_mom += 1
        y = x_new + (k_mom - 1) / (k_mom + 2) * (x_new - prev)
        prev = x_new
    return S_best, best, it, gnorm, history


def minimize_action(spec: DiffusionSpec, A, B, N: int = 200, T_grid=None, iters: int = 4000,
                    tol: float = 1e-6, T_bounds=(0.5, 64.0), n_T: int = 16,
                    init=None, perturbation: float = 0.0, seed: int = 0) -> QuasipotentialResult:
    """Minimize the discrete action over paths from ``A`` to ``B`` and over ``T``.

    ``A`` and ``B`` are points, :class:`Ball` or :class:`Polyline` sets. The
    default T-grid is geometric over ``T_bounds`` times ``diam/|b|_typ``.
    Each grid value is optimized independently, warm-started from the
    previous optimum resampled in time.
    """
    A, B = _as_set(A), _as_set(B)
    a0, b0 = A.center, B.center
    if init is None:
        init_pts = PathDiscretization.straight(a0, b0, 1.0, N).points
    else:
        init_pts = np.asarray(init, float)
    if perturbation:
        rng = np.random.default_rng(seed)
        bump = np.sin(np.linspace(0, np.pi, N + 1))[:, None]
        init_pts = init_pts + perturbation * bump * rng.standard_normal(init_pts.shape[1])
    diam = float(np.linalg.norm(b0 - a0))
    if diam == 0.0 and not (A.free or B.free):
        zero = np.repeat(a0[None], N + 1, axis=0)
        return QuasipotentialResult(0.0, zero, 1.0, 0, 0.0, np.array([1.0]), np.array([0.0]), True)
    if T_grid is None:
        speed = float(np.mean(np.linalg.norm(spec.drift(init_pts), axis=-1)))
        scale = max(diam, 1e-3) / max(speed, 1e-3)
        scale = min(scale, 10.0 * max(diam, 1e-3))
        T_grid = scale * np.geomspace(T_bounds[0], T_bounds[1], n_T)
    T_grid = np.asarray(T_grid, float)
    cache = {"metric": _Metric(spec), "jac": _drift_jacobian(spec)}
    values = np.empty(len(T_grid))
    best = None
    total_it = 0
    pts = init_pts
    history = []
    for i, T in enumerate(T_grid):
        S, p, it, gn, hist = _descend(spec, pts, T, A, B, iters, tol, cache)
        values[i] = S
        total_it += it
        history.extend(hist)
        if best is None or S < best[0]:
            best = (S, p, T, gn)
        pts = p
    S, p, T, gn = best
    return QuasipotentialResult(max(float(S), 0.0), p, float(T), total_it, float(gn), T_grid,
                                values, bool(gn < tol * 100), history)


def v_matrix(spec: DiffusionSpec, compacts, tie_tol: float = 1e-2, **kw):
    """Pairwise transition exponents between attractor sets.

    Returns ``(V, info)`` with ``info`` holding per-entry convergence flags and
    the list of rows where two exponents are tied to within ``tie_tol`` of the
    row maximum (rough symmetry).
    """
    ell = len(compacts)
    if ell < 2:
        raise ValueError("need at least two compacts")
    V = np.zeros((ell, ell))
    flags = np.ones((ell, ell), bool)
    for i in range(ell):
        for j in range(ell):
            if i == j:
                continue
            r = minimize_action(spec, compacts[i], compacts[j], **kw)
            V[i, j] = r.value
            flags[i, j] = r.converged
    ties = []
    for i in range(ell):
        row = [V[i, j] for j in range(ell) if j != i]
        scale = max(max(row), 1e-12)
        idx = [j for j in range(ell) if j != i]
        for p in range(len(row)):
            for q in range(p + 1, len(row)):
                if abs(row[p] - row[q]) < tie_tol * scale:
                    ties.append((i, idx[p], idx[q]))
    sym = [(i, j) for i in range(ell) for j in range(i + 1, ell)
           if abs(V[i, j] - V[j, i]) < tie_tol * max(V[i, j], V[j, i], 1e-12)]
    return V, {"converged": flags, "ties": ties, "symmetric_pairs": sym}


# ---------------------------------------------------------------------------
# One-dimensional quasipotential

def _simpson(f, a, b, fa, fm, fb):
    return (b - a) / 6.0 * (fa + 4 * fm + fb)


def _adaptive(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = _simpson(f, a, m, fa, flm, fm)
    right = _simpson(f, m, b, fm, frm, fb)
    if depth <= 0 or abs(left + right - whole) <= 15 * tol:
        return left + right + (left + right - whole) / 15.0
    return (_adaptive(f, a, m, fa, flm, fm, left, tol / 2, depth - 1)
            + _adaptive(f, m, b, fm, frm, fb, right, tol / 2, depth - 1))


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10,
                     max_depth: int = 50, panels: int = 1) -> float:
    """Adaptive Simpson rule started on ``panels`` equal panels, so that
    features narrower than ``(b - a) / 4`` are not skipped by the first test."""
    if a == b:
        return 0.0
    edges = np.linspace(a, b, panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        fa, fb, fm = f(lo), f(hi), f(0.5 * (lo + hi))
        whole = _simpson(f, lo, hi, fa, fm, fb)
        total += _adaptive(f, lo, hi, fa, fm, fb, whole, tol / panels, max_depth)
    return total


def quasipotential_1d(f: Callable[[float], float], sigma2: Callable[[float], float],
                      x_from: float, x_to: float, tol: float = 1e-10) -> float:
    """``2 * int_{x_from}^{x_to} f / sigma^2 dx`` by adaptive Simpson.

    Integrate from the unstable point toward the stable one; the integrand's
    sign then makes the value nonnegative.
    """
    probe = np.linspace(x_from, x_to, 65)
    if np.any(np.asarray([sigma2(x) for x in probe]) <= 0):
        raise ValueError("sigma^2 must be positive on the interval")

    def g(x):
        s2 = sigma2(x)
        if s2 <= 0:
            raise ValueError(f"sigma^2 <= 0 at x={x}")
        return f(x) / s2

    return 2.0 * adaptive_simpson(g, float(x_from), float(x_to), tol / 2, panels=64)


def quasipotential_point(spec: DiffusionSpec, attractor, x, **kw) -> QuasipotentialResult:
    """V(x) relative to an attractor (point or ball)."""
    return minimize_action(spec, attractor, Point(tuple(np.atleast_1d(x))), **kw)


def quasipotential_boundary(spec: DiffusionSpec, attractor, boundary: Polyline, n_candidates: int = 12,
                            degeneracy_tol: float = 1e-2, **kw) -> tuple:
    """min of V over a closed polygonal boundary.

    V is evaluated at ``n_candidates`` points spread along the boundary; the best
    one seeds a refinement with the endpoint free on the polygon. Returns
    ``(result, x_star)``; ``result.degenerate`` is set when all candidates lie
    within ``degeneracy_tol`` (relative) of the minimum.
    """
    cands = boundary.samples(n_candidates)
    vals = []
    results = []
    for c in cands:
        r = quasipotential_point(spec, attractor, c, **kw)
        vals.append(r.value)
        results.append(r)
    vals = np.asarray(vals)
    k = int(np.argmin(vals))
    refined = minimize_action(spec, attractor, boundary, init=results[k].path,
                              T_grid=[results[k].T], **{key: v for key, v in kw.items() if key != "T_grid"})
    best = refined if refined.value <= vals[k] else results[k]
    spread = (vals.max() - vals.min()) / max(vals.min(), 1e-12)
    best.degenerate = bool(spread < degeneracy_tol)
    return best, best.path[-1].copy()


# ---------------------------------------------------------------------------
# Export

def path_csv(result: QuasipotentialResult, path=None) -> str:
    pts = result.path
    t = np.linspace(0, result.T, len(pts))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(pts.shape[1])])
    for ti, p in zip(t, pts):
        w.writerow([repr(float(ti))] + [repr(float(v)) for v in p])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    return text


def v_matrix_json(V, info=None) -> str:
    doc = {"V": np.asarray(V).tolist()}
    if info:
        doc["converged"] = np.asarray(info["converged"]).tolist()
        doc["ties"] = [list(t) for t in info["ties"]]
    return json.dumps(doc, indent=2)
