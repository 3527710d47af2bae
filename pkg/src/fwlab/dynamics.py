"""
Perturbed dynamical systems
===========================

Deterministic and stochastic integration of

    dX = (b(X) + eps * beta(X)) dt + sqrt(eps) * sigma(X) dW,

together with first-exit statistics, empirical occupation measures and
averages along limit cycles.

Ensembles are integrated as one vectorised array; each step draws one block of
normals for the whole ensemble in a fixed order, so a run is reproducible from
its seed.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .field_dsl import free_variables, matrix_field, vector_field
from .rng import RngStream

__all__ = [
    "DiffusionSpec", "Trajectory", "OccupationMeasure", "BlowUpError", "TimeoutResult",
    "Interval", "Box", "Ball", "Polygon", "Predicate", "ExitResult",
    "integrate_ode", "integrate_sde", "sde_ensemble", "first_exit", "first_exit_ensemble",
    "occupation", "limit_cycle_average", "trajectory_csv", "occupation_csv",
    "gronwall_bound",
]

BLOWUP_FACTOR = 1e6

_trapezoid = getattr(np, "trapezoid", None) or np.trapz  # renamed in numpy 2.0


class BlowUpError(RuntimeError):
    def __init__(self, index, message="non-finite or diverging state"):
        super().__init__(f"{message} at step {index}")
        self.index = index


# ---------------------------------------------------------------------------
# System description

@dataclass(frozen=True)
class DiffusionSpec:
    """A perturbed system ``(b, beta, sigma, eps)``.

    ``drift``, ``beta`` and ``sigma`` are callables on arrays of shape
    ``(..., n)``; ``sigma`` returns ``(..., n, n)``. ``sigma=None`` means the
    identity. ``box`` is a ``(lo, hi)`` pair bounding the region of interest
    and sets the blow-up threshold.
    """

    dim: int
    drift: Callable
    beta: Callable | None = None
    sigma: Callable | None = None
    eps: float = 0.0
    box: tuple | None = None
    lipschitz: float | None = None
    sigma_constant: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_sources(cls, drift, beta=None, sigma=None, eps=0.0, variables=None, box=None,
                     lipschitz=None):
        """Build from expression sources, e.g. ``drift=["-x1"]``."""
        n = len(drift)
        if variables is None:
            variables = [f"x{i + 1}" for i in range(n)]
        b = vector_field(drift, variables, "b")
        be = vector_field(beta, variables, "beta") if beta is not None else None
        sig = None
        sig_const = None
        if sigma is not None:
            sig = matrix_field(sigma, variables, "sigma")
            if sig.shape != (n, n):
                raise ValueError(f"sigma must be {n}x{n}, got {sig.shape}")
            if all(not free_variables(c) for c in sig.components):
                sig_const = sig(np.zeros(n))
        else:
            sig_const = np.eye(n)
        if box is not None:
            box = (np.asarray(box[0], float), np.asarray(box[1], float))
        return cls(n, b, be, sig, float(eps), box, lipschitz, sig_const)

    def with_eps(self, eps):
        return DiffusionSpec(self.dim, self.drift, self.beta, self.sigma, float(eps), self.box,
                             self.lipschitz, self.sigma_constant)

    def total_drift(self, x):
        out = self.drift(x)
        if self.beta is not None and self.eps != 0.0:
            out = out + self.eps * self.beta(x)
        return out

    def sigma_at(self, x):
        x = np.asarray(x, float)
        if self.sigma_constant is not None:
            return np.broadcast_to(self.sigma_constant, x.shape[:-1] + (self.dim, self.dim))
        if self.sigma is None:
            return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim))
        return self.sigma(x)

    def diffusion_matrix(self, x):
        s = self.sigma_at(x)
        return s @ np.swapaxes(s, -1, -2)

    def check_psd(self, points, tol=1e-12):
        """Verify a = sigma sigma^T is symmetric positive semidefinite at the points."""
        a = self.diffusion_matrix(np.atleast_2d(points))
        if not np.allclose(a, np.swapaxes(a, -1, -2), atol=tol):
            return False
        return bool(np.all(np.linalg.eigvalsh(a) >= -tol * (1 + np.abs(a).max())))

    @property
    def blowup_radius(self):
        if self.box is None:
            return BLOWUP_FACTOR * 10.0
        diam = float(np.linalg.norm(np.asarray(self.box[1]) - np.asarray(self.box[0])))
        return BLOWUP_FACTOR * max(diam, 1.0)


@dataclass
class Trajectory:
    dt: float
    T: float
    states: np.ndarray

    @property
    def times(self):
        return self.dt * np.arange(len(self.states))

    @property
    def final(self):
        return self.states[-1]

    def to_csv(self, path=None):
        return trajectory_csv(self, path)


def _n_steps(dt, T):
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T < dt:
        raise ValueError("T must be at least dt")
    return int(np.floor(T / dt + 1e-9))


def _check(x, k, radius):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > radius:
        raise BlowUpError(k)


# ---------------------------------------------------------------------------
# Integration

def rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_ode(spec: DiffusionSpec, x0, dt: float, T: float) -> Trajectory:
    """Classical RK4 for x' = b(x) + eps * beta(x); the noise is ignored."""
    n = _n_steps(dt, T)
    x = np.asarray(x0, float).reshape(spec.dim)
    out = np.empty((n + 1, spec.dim))
    out[0] = x
    radius = spec.blowup_radius
    for k in range(n):
        x = rk4_step(spec.total_drift, x, dt)
        _check(x, k + 1, radius)
        out[k + 1] = x
    return Trajectory(dt, T, out)


def _noise_increment(spec, x, xi, scale):
    if spec.sigma_constant is not None:
        return scale * xi @ spec.sigma_constant.T
    s = spec.sigma_at(x)
    return scale * np.einsum("...ij,...j->...i", s, xi)


def integrate_sde(spec: DiffusionSpec, x0, dt: float, T: float, rng: RngStream,
                  scheme: str = "euler") -> Trajectory:
    """Single path by Euler-Maruyama.

    ``X_{k+1} = X_k + (b + eps beta) dt + sqrt(eps) sigma(X_k) sqrt(dt) xi_k``.
    ``scheme="rk4"`` advances the drift with an RK4 substep instead, which is
    needed when the drift rotates fast (weak order stays one).
    """
    n = _n_steps(dt, T)
    x = np.asarray(x0, float).reshape(1, spec.dim)
    out = np.empty((n + 1, spec.dim))
    out[0] = x[0]
    scale = np.sqrt(spec.eps * dt)
    radius = spec.blowup_radius
    for k in range(n):
        xi = rng.normal((1, spec.dim))
        x = _step(spec, x, dt, xi, scale, scheme)
        _check(x, k + 1, radius)
        out[k + 1] = x[0]
    return Trajectory(dt, T, out)


def _step(spec, x, dt, xi, scale, scheme):
    if scheme == "euler":
        drift_part = x + dt * spec.total_drift(x)
    elif scheme == "rk4":
        drift_part = rk4_step(spec.total_drift, x, dt)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if scale == 0.0:
        return drift_part
    return drift_part + _noise_increment(spec, x, xi, scale)


def sde_ensemble(spec: DiffusionSpec, x0, n_paths: int, dt: float, T: float, rng: RngStream,
                 scheme: str = "euler", record_every: int | None = None):
    """Integrate ``n_paths`` independent paths from ``x0`` (a point or an array of points).

    Returns the final states, shape ``(n_paths, n)``; with ``record_every=k``
    also returns the states every ``k`` steps, shape ``(n_rec, n_paths, n)``.
    """
    n = _n_steps(dt, T)
    x0 = np.asarray(x0, float)
    x = np.broadcast_to(x0, (n_paths, spec.dim)).copy()
    scale = np.sqrt(spec.eps * dt)
    radius = spec.blowup_radius
    rec = [x.copy()] if record_every else None
    for k in range(n):
        xi = rng.normal((n_paths, spec.dim)) if scale else None
        x = _step(spec, x, dt, xi, scale, scheme)
        if k % 64 == 63 or k == n - 1:
            _check(x, k + 1, radius)
        if record_every and (k + 1) % record_every == 0:
            rec.append(x.copy())
    if record_every:
        return x, np.stack(rec)
    return x


def gronwall_bound(eps, beta_bound, lipschitz, t):
    """Bound eps*N*t*exp(K t) on the deviation caused by a drift perturbation."""
    return eps * beta_bound * t * np.exp(lipschitz * t)


# ---------------------------------------------------------------------------
# Domains for exit problems

class Domain:
    def inside(self, x):  # pragma: no cover - interface
        raise NotImplementedError

    def crossing_fraction(self, x_in, x_out):
        """Fraction s in [0, 1] where x_in + s (x_out - x_in) leaves the domain."""
        lo = np.zeros(len(x_in))
        hi = np.ones(len(x_in))
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            pts = x_in + mid[:, None] * (x_out - x_in)
            ins = self.inside(pts)
            lo = np.where(ins, mid, lo)
            hi = np.where(ins, hi, mid)
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class Interval(Domain):
    lo: float
    hi: float

    def inside(self, x):
        x = np.asarray(x, float)[..., 0]
        return (x > self.lo) & (x < self.hi)

    def crossing_fraction(self, x_in, x_out):
        a, b = x_in[:, 0], x_out[:, 0]
        target = np.where(b <= self.lo, self.lo, self.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (target - a) / (b - a)
        return np.clip(np.nan_to_num(s, nan=1.0), 0.0, 1.0)


@dataclass(frozen=True)
class Box(Domain):
    lo: tuple
    hi: tuple

    def inside(self, x):
        x = np.asarray(x, float)
        return np.all((x > np.asarray(self.lo)) & (x < np.asarray(self.hi)), axis=-1)

    def crossing_fraction(self, x_in, x_out):
        d = x_out - x_in
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_lo = np.where(d < 0, (lo - x_in) / d, np.inf)
            s_hi = np.where(d > 0, (hi - x_in) / d, np.inf)
        return np.clip(np.min(np.minimum(s_lo, s_hi), axis=-1), 0.0, 1.0)


@dataclass(frozen=True)
class Ball(Domain):
    center: tuple
    radius: float

    def inside(self, x):
        return np.linalg.norm(np.asarray(x, float) - np.asarray(self.center), axis=-1) < self.radius

    def crossing_fraction(self, x_in, x_out):
        c = np.asarray(self.center, float)
        p = x_in - c
        d = x_out - x_in
        a = np.sum(d * d, axis=-1)
        b = 2 * np.sum(p * d, axis=-1)
        cc = np.sum(p * p, axis=-1) - self.radius ** 2
        disc = np.maximum(b * b - 4 * a * cc, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (-b + np.sqrt(disc)) / (2 * a)
        return np.clip(np.nan_to_num(s, nan=1.0), 0.0, 1.0)


@dataclass(frozen=True)
class Polygon(Domain):
    """Simple planar polygon given by its vertices (not repeated at the end)."""

    vertices: tuple

    def inside(self, x):
        x = np.asarray(x, float)
        v = np.asarray(self.vertices, float)
        px, py = x[..., 0], x[..., 1]
        res = np.zeros(px.shape, bool)
        n = len(v)
        for i in range(n):
            x1, y1 = v[i]
            x2, y2 = v[(i + 1) % n]
            cond = (y1 > py) != (y2 > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            res ^= cond & (px < xint)
        return res

    def boundary_points(self, per_edge=50):
        v = np.asarray(self.vertices, float)
        pts = []
        for i in range(len(v)):
            a, b = v[i], v[(i + 1) % len(v)]
            s = np.linspace(0, 1, per_edge, endpoint=False)[:, None]
            pts.append(a + s * (b - a))
        return np.concatenate(pts)


@dataclass(frozen=True)
class Predicate(Domain):
    fn: Callable

    def inside(self, x):
        return np.asarray(self.fn(np.asarray(x, float)), bool)


@dataclass
class ExitResult:
    tau: np.ndarray
    exit_points: np.ndarray
    timed_out: np.ndarray

    @property
    def n_exits(self):
        return int(np.sum(~self.timed_out))

    def mean_tau(self):
        return float(np.mean(self.tau[~self.timed_out]))


@dataclass
class TimeoutResult:
    T_max: float
    last_state: np.ndarray


def first_exit_ensemble(spec: DiffusionSpec, x0, domain: Domain, dt: float, T_max: float,
                        rng: RngStream, n_paths: int = 1, scheme: str = "euler",
                        compact_every: int = 256) -> ExitResult:
    """First exit of ``n_paths`` paths from ``domain``.

    The exit time is refined by linear interpolation between the last inside
    and the first outside state. Paths still inside at ``T_max`` are flagged
    as timed out and report the time ``T_max`` with their last state.
    """
    x0 = np.asarray(x0, float)
    x = np.broadcast_to(x0, (n_paths, spec.dim)).copy()
    tau = np.full(n_paths, np.nan)
    exit_pts = np.full((n_paths, spec.dim), np.nan)
    start_inside = domain.inside(x)
    tau[~start_inside] = 0.0
    exit_pts[~start_inside] = x[~start_inside]
    idx = np.flatnonzero(start_inside)
    x = x[idx]
    n_max = _n_steps(dt, T_max)
    scale = np.sqrt(spec.eps * dt)
    radius = spec.blowup_radius
    for k in range(n_max):
        if idx.size == 0:
            break
        # draw for the full ensemble so a path's noise depends only on (seed, step, path)
        xi_all = rng.normal((n_paths, spec.dim)) if scale else None
        xi = xi_all[idx] if scale else None
        x_new = _step(spec, x, dt, xi, scale, scheme)
        out = ~domain.inside(x_new)
        if np.any(out):
            s = domain.crossing_fraction(x[out], x_new[out])
            ids = idx[out]
            tau[ids] = (k + s) * dt
            exit_pts[ids] = x[out] + s[:, None] * (x_new[out] - x[out])
            keep = ~out
            idx = idx[keep]
            x_new = x_new[keep]
        x = x_new
        if k % compact_every == 0 and x.size:
            _check(x, k + 1, radius)
    timed_out = np.isnan(tau)
    tau[timed_out] = n_max * dt
    if idx.size:
        exit_pts[idx] = x
    return ExitResult(tau, exit_pts, timed_out)


def first_exit(spec: DiffusionSpec, x0, domain: Domain, dt: float, T_max: float,
               rng: RngStream, scheme: str = "euler"):
    """Single-path first exit: ``(tau, exit_point)`` or a :class:`TimeoutResult`."""
    res = first_exit_ensemble(spec, x0, domain, dt, T_max, rng, 1, scheme)
    if res.timed_out[0]:
        return TimeoutResult(T_max, res.exit_points[0])
    return float(res.tau[0]), res.exit_points[0]


# ---------------------------------------------------------------------------
# Occupation measures and cycle averages

@dataclass
class OccupationMeasure:
    averages: np.ndarray
    edges: list
    mass: np.ndarray
    outside_mass: float

    def bin_centers(self):
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges]

    def to_csv(self, path=None):
        return occupation_csv(self, path)


def occupation(traj: Trajectory, tests: Sequence[Callable] = (), box=None, bins=20) -> OccupationMeasure:
    """Time averages (1/T) int f(X_t) dt by the trapezoid rule and a histogram on ``box``."""
    states = np.asarray(traj.states, float)
    if states.size == 0:
        raise ValueError("empty trajectory")
    T = traj.dt * (len(states) - 1)
    avgs = []
    for f in tests:
        vals = np.asarray(f(states), float).reshape(len(states), -1)[:, 0]
        if T == 0:
            avgs.append(float(vals[0]))
        else:
            avgs.append(float(_trapezoid(vals, dx=traj.dt) / T))
    edges, mass, outside = [], np.zeros(0), 0.0
    if box is not None:
        lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
        nb = np.broadcast_to(np.asarray(bins), lo.shape)
        edges = [np.linspace(lo[i], hi[i], int(nb[i]) + 1) for i in range(len(lo))]
        counts, _ = np.histogramdd(states, bins=edges)
        mass = counts / len(states)
        outside = 1.0 - float(mass.sum())
    return OccupationMeasure(np.asarray(avgs), edges, mass, outside)


def limit_cycle_average(g: Callable, cycle, b: Callable) -> float:
    """Average of ``g`` over a closed orbit weighted by the time spent there.

    Midpoint quadrature of ``oint g/|b| dl / oint 1/|b| dl``.
    """
    pts = np.asarray(cycle, float)
    if not np.allclose(pts[0], pts[-1]):
        pts = np.vstack([pts, pts[:1]])
    mids = 0.5 * (pts[1:] + pts[:-1])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    speed = np.linalg.norm(np.asarray(b(mids), float), axis=-1)
    if np.any(speed < 1e-12):
        raise ValueError("|b| vanishes on the cycle")
    gv = np.asarray(g(mids), float).reshape(len(mids), -1)[:, 0]
    w = seg / speed
    return float(np.sum(gv * w) / np.sum(w))


# ---------------------------------------------------------------------------
# CSV export

def _write_rows(header, rows, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) for v in r])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    return text


def trajectory_csv(traj: Trajectory, path=None) -> str:
    n = traj.states.shape[1]
    rows = np.column_stack([traj.times, traj.states])
    return _write_rows(["t"] + [f"x{i + 1}" for i in range(n)], rows, path)


def occupation_csv(occ: OccupationMeasure, path=None) -> str:
    centers = occ.bin_centers()
    grids = np.meshgrid(*centers, indexing="ij")
    rows = np.column_stack([g.ravel() for g in grids] + [occ.mass.ravel()])
    return _write_rows([f"c{i + 1}" for i in range(len(centers))] + ["mass"], rows, path)
