"""
FKPP fronts
===========

For ``u_t = (eps/2) a u'' + (1/eps) c(x, u) u`` the region where ``u`` is
close to one is governed by two variational functions of paths ``phi`` from
``x`` into the initial support ``G``:

    V_0(t, x) = sup int_0^t [c(phi) - |phi'|^2 / (2a)] ds
    V_1(t, x) = sup min_theta int_0^theta [...] ds

Both are computed here by dynamic programming on a grid. ``V_1 = 0`` is
tracked through the minimal starting budget ``B`` that keeps every prefix
integral nonnegative, so only its zero set is produced.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

__all__ = [
    "ReactionSpec", "FrontField", "WindowError", "StabilityError", "NotReachedError",
    "SENTINEL", "v0_dp", "v1_front", "front_field", "huygens_constant", "pde_solve_1d",
    "PDEResult", "front_time", "equivalent_radius", "interface_position", "grid_csv",
    "front_positions_csv",
]

SENTINEL = -1e18


class WindowError(ValueError):
    pass


class StabilityError(ValueError):
    pass


class NotReachedError(RuntimeError):
    pass


@dataclass
class ReactionSpec:
    """Grid, rate ``c(x) = c(x, 0)``, diffusion ``a`` and initial support ``G_0``.

    ``axes`` holds one uniform 1-D coordinate array per dimension (spacing
    ``hx`` in all of them). ``nonlinearity(x, u)`` is the full ``c(x, u)``
    used by the PDE solver; it defaults to ``c(x) (1 - u)``.
    """

    axes: tuple
    rate: np.ndarray
    support: np.ndarray
    a: float = 1.0
    nonlinearity: Callable | None = None
    initial: np.ndarray | None = None

    def __post_init__(self):
        self.axes = tuple(np.asarray(ax, float) for ax in self.axes)
        shape = tuple(len(ax) for ax in self.axes)
        self.rate = np.broadcast_to(np.asarray(self.rate, float), shape).copy()
        self.support = np.asarray(self.support, bool)
        if self.support.shape != shape:
            raise ValueError(f"support shape {self.support.shape} != grid {shape}")
        if not self.support.any():
            raise ValueError("initial support G_0 is empty")
        if not np.all(self.rate > 0) or not np.all(np.isfinite(self.rate)):
            raise ValueError("rate c(x) must be bounded and positive")
        if self.a <= 0:
            raise ValueError("a must be positive")
        steps = [np.diff(ax) for ax in self.axes]
        h = steps[0][0]
        if any(not np.allclose(s, h, rtol=1e-9, atol=0) for s in steps):
            raise ValueError("grid must be uniform with equal spacing on every axis")
        self.hx = float(h)

    @classmethod
    def on_box(cls, box, hx, rate, support, a=1.0, nonlinearity=None, initial=None):
        """``box`` is ``[(lo, hi), ...]``; ``rate`` and ``support`` may be
        callables of the coordinate arrays (meshgrid, 'ij' indexing)."""
        axes = tuple(np.arange(lo, hi + 0.5 * hx, hx) for lo, hi in box)
        mesh = np.meshgrid(*axes, indexing="ij")
        r = rate(*mesh) if callable(rate) else rate
        s = support(*mesh) if callable(support) else support
        return cls(axes, r, s, a, nonlinearity, initial)

    @property
    def shape(self):
        return self.rate.shape

    @property
    def mesh(self):
        return np.meshgrid(*self.axes, indexing="ij")

    def c_of(self, u):
        if self.nonlinearity is None:
            return self.rate * (1.0 - u)
        return self.nonlinearity(self.axes[0] if len(self.axes) == 1 else self.mesh, u)

    def check_fkpp(self, u_samples=None, tol=1e-12):
        """Sample the FKPP sign conditions on ``c(x, u)``; returns the violations found."""
        if u_samples is None:
            u_samples = np.concatenate([np.linspace(0, 0.99, 12), np.linspace(1.01, 2, 5)])
        bad = []
        c0 = self.c_of(np.zeros(self.shape))
        for u in u_samples:
            cu = self.c_of(np.full(self.shape, u))
            if u < 1 and np.any(cu <= 0):
                bad.append(("nonpositive below 1", float(u)))
            if u > 1 and np.any(cu >= 0):
                bad.append(("nonnegative above 1", float(u)))
            if np.any(cu > c0 + tol):
                bad.append(("exceeds c(x,0)", float(u)))
        return bad


@dataclass
class FrontField:
    times: np.ndarray
    v0: list = field(default_factory=list)
    front: list = field(default_factory=list)
    budget: list = field(default_factory=list)
    window: int = 0

    def front_at(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        return self.front[k]


# ---------------------------------------------------------------------------
# Dynamic programming

def _offsets(ndim, w):
    rng = np.arange(-w, w + 1)
    grids = np.meshgrid(*([rng] * ndim), indexing="ij")
    off = np.stack([g.ravel() for g in grids], axis=1)
    r2 = np.sum(off**2, axis=1)
    keep = r2 <= w * w
    off, r2 = off[keep], r2[keep]
    ring = r2 > (w - 1) ** 2
    return off, r2, ring


def _check_step(spec, t, dt, window):
    n = t / dt
    M = int(round(n))
    if M < 0 or abs(n - M) > 1e-9 * max(1.0, n):
        raise ValueError(f"dt={dt} does not divide t={t}")
    reach = 3.0 * np.sqrt(spec.a * float(spec.rate.max())) * dt
    if window is None:
        window = max(1, int(np.ceil(reach / spec.hx - 1e-12)))
    if window * spec.hx < reach * (1 - 1e-12):
        raise WindowError(f"window {window} cells < 3 sqrt(a c_max) dt / hx = {reach / spec.hx:.3g}")
    return M, int(window)


def _shifted(arr, w, fill):
    pad = np.pad(arr, w, mode="constant", constant_values=fill)
    return pad


def _window_max(W, off, r2, ring, hx, a, dt, w, sentinel=SENTINEL):
    """``max_y W(y) - |x-y|^2/(2 a dt)`` over the window, plus whether the
    argmax sat on the window's outer ring."""
    pad = _shifted(W, w, sentinel)
    best = np.full(W.shape, sentinel)
    on_ring = np.zeros(W.shape, bool)
    shape = W.shape
    for o, d2, rg in zip(off, r2, ring):
        sl = tuple(slice(w + oi, w + oi + n) for oi, n in zip(o, shape))
        cand = pad[sl] - d2 * hx * hx / (2 * a * dt)
        better = cand > best
        best = np.where(better, cand, best)
        on_ring = np.where(better, rg, on_ring)
    return best, on_ring


def _window_min(B, off, r2, ring, hx, a, dt, w, gain_c):
    """``min_y max(0, B(y)) + |x-y|^2/(2 a dt)`` minus ``c(x) dt``."""
    big = -SENTINEL
    pad = _shifted(np.maximum(B, 0.0), w, big)
    best = np.full(B.shape, big)
    on_ring = np.zeros(B.shape, bool)
    shape = B.shape
    for o, d2, rg in zip(off, r2, ring):
        sl = tuple(slice(w + oi, w + oi + n) for oi, n in zip(o, shape))
        cand = pad[sl] + d2 * hx * hx / (2 * a * dt)
        better = cand < best
        best = np.where(better, cand, best)
        on_ring = np.where(better, rg, on_ring)
    return best, on_ring


def front_field(spec: ReactionSpec, t: float, dt: float, window: int | None = None,
                record_every: int = 1, check_window: bool = True, with_v0: bool = True,
                with_front: bool = True) -> FrontField:
    """Run both DPs to time ``t`` and record ``V_0``, ``B`` and the front."""
    M, w = _check_step(spec, t, dt, window)
    off, r2, ring = _offsets(len(spec.shape), w)
    gain = spec.rate * dt
    W = np.where(spec.support, 0.0, SENTINEL)
    B = np.where(spec.support, 0.0, -SENTINEL)
    out = FrontField(times=np.array([0.0]), window=w)
    if with_v0:
        out.v0.append(W.copy())
    if with_front:
        out.budget.append(B.copy())
        out.front.append(B <= 0.0)
    times = [0.0]
    for k in range(1, M + 1):
        if with_v0:
            best, at_ring = _window_max(W, off, r2, ring, spec.hx, spec.a, dt, w)
            W = np.where(best <= 0.5 * SENTINEL, SENTINEL, best + gain)
            if check_window and w > 1:
                relevant = W >= 0
                if relevant.any() and np.mean(at_ring[relevant]) > 0.01:
                    raise WindowError(f"argmax on the window boundary for "
                                      f"{100 * np.mean(at_ring[relevant]):.1f}% of V_0 >= 0 cells")
        if with_front:
            best, _ = _window_min(B, off, r2, ring, spec.hx, spec.a, dt, w, gain)
            B = np.where(best >= -0.5 * SENTINEL, -SENTINEL, np.maximum(0.0, best - gain))
        if k % record_every == 0 or k == M:
            times.append(k * dt)
            if with_v0:
                out.v0.append(W.copy())
            if with_front:
                out.budget.append(B.copy())
                out.front.append(B <= 0.0)
    out.times = np.asarray(times)
    return out


def v0_dp(spec: ReactionSpec, t: float, dt: float, window: int | None = None) -> np.ndarray:
    return front_field(spec, t, dt, window, record_every=10**9, with_front=False).v0[-1]


def v1_front(spec: ReactionSpec, t: float, dt: float, window: int | None = None) -> np.ndarray:
    """Indicator of ``{V_1(t, .) = 0}``."""
    return front_field(spec, t, dt, window, record_every=10**9, with_v0=False).front[-1]


def huygens_constant(spec: ReactionSpec, t: float, c: float | None = None) -> np.ndarray:
    """``{dist(x, G_0) <= t sqrt(2 c a)}`` via a Euclidean distance transform."""
    if c is None:
        c = float(spec.rate.flat[0])
        if not np.allclose(spec.rate, c):
            raise ValueError("huygens_constant needs a constant rate")
    if c <= 0:
        raise ValueError("c must be positive")
    dist = ndimage.distance_transform_edt(~spec.support, sampling=spec.hx)
    return dist <= t * np.sqrt(2 * c * spec.a) + 1e-12


def equivalent_radius(mask: np.ndarray, hx: float) -> float:
    """Radius of the disc (2-D) or half-length (1-D) with the same measure."""
    n = float(mask.sum())
    if mask.ndim == 1:
        return 0.5 * n * hx
    if mask.ndim == 2:
        return float(np.sqrt(n * hx * hx / np.pi))
    raise ValueError("1-D or 2-D masks only")


# ---------------------------------------------------------------------------
# Reference PDE

@dataclass
class PDEResult:
    x: np.ndarray
    times: np.ndarray
    u: np.ndarray  # (len(times), len(x))
    dt: float
    clip_count: int


def pde_solve_1d(spec: ReactionSpec, eps: float, t: float, dt: float | None = None,
                 record_times=None, initial=None) -> PDEResult:
    """Explicit scheme for ``u_t = sqrt(eps) (a/2) u'' + c(x, u) u / sqrt(eps)``
    with zero-flux ends; ``u`` is clipped to ``[0, 1 + 1e-6]``."""
    if len(spec.axes) != 1:
        raise ValueError("pde_solve_1d is one-dimensional")
    if eps < 1e-3:
        raise StabilityError("eps below 1e-3 is too stiff for the explicit scheme")
    x = spec.axes[0]
    hx = spec.hx
    se = np.sqrt(eps)
    limit = 0.9 * hx * hx / (2 * se * spec.a)
    if dt is None:
        dt = limit
    if dt > limit * (1 + 1e-12):
        raise StabilityError(f"dt={dt} exceeds the explicit limit {limit:.3g}")
    u = np.asarray(initial if initial is not None else
                   (spec.initial if spec.initial is not None else spec.support.astype(float)), float).copy()
    n_steps = int(np.ceil(t / dt - 1e-9))
    dt = t / n_steps if n_steps else dt
    rec = sorted(set([0.0, t] + list(record_times or [])))
    rec_steps = {int(round(r / dt)): r for r in rec}
    snaps, snap_t = [], []
    clips = 0
    D = 0.5 * se * spec.a
    for k in range(n_steps + 1):
        if k in rec_steps:
            snaps.append(u.copy())
            snap_t.append(k * dt)
        if k == n_steps:
            break
        lap = np.empty_like(u)
        lap[1:-1] = u[2:] - 2 * u[1:-1] + u[:-2]
        lap[0] = 2 * (u[1] - u[0])
        lap[-1] = 2 * (u[-2] - u[-1])
        u = u + dt * (D * lap / (hx * hx) + spec.c_of(u) * u / se)
        over = (u < 0) | (u > 1 + 1e-6)
        if over.any():
            clips += int(over.sum())
            np.clip(u, 0.0, 1 + 1e-6, out=u)
    return PDEResult(x, np.asarray(snap_t), np.stack(snaps), dt, clips)


def interface_position(x: np.ndarray, u: np.ndarray, level: float = 0.5) -> float:
    """Rightmost crossing of ``level``, linearly interpolated."""
    above = np.flatnonzero(u >= level)
    if above.size == 0:
        return float("nan")
    i = above[-1]
    if i == len(x) - 1:
        return float(x[-1])
    u0, u1 = u[i], u[i + 1]
    return float(x[i] + (u0 - level) / (u0 - u1) * (x[i + 1] - x[i]))


# ---------------------------------------------------------------------------

def front_time(spec: ReactionSpec, index, t_max: float, dt: float, window: int | None = None) -> float:
    """``t*`` solving ``V_0(t*, x) = 0`` at the grid point ``index``.

    ``V_0(., x)`` is nondecreasing in ``t``; the DP is run once with step
    ``dt`` and the root is bracketed between consecutive steps, then located
    by bisection on the linear interpolant of ``V_0`` in ``t``.
    """
    index = tuple(np.atleast_1d(index))
    if spec.support[index]:
        return 0.0
    M, w = _check_step(spec, t_max, dt, window)
    ff = front_field(spec, t_max, dt, w, record_every=1, with_front=False, check_window=False)
    vals = np.array([v[index] for v in ff.v0])
    hit = np.flatnonzero(vals >= 0)
    if hit.size == 0:
        raise NotReachedError(f"V_0 < 0 at {index} up to t_max={t_max}")
    k = hit[0]
    lo_t, hi_t = ff.times[k - 1], ff.times[k]
    v_lo, v_hi = vals[k - 1], vals[k]
    if v_lo <= 0.5 * SENTINEL:
        return float(hi_t)
    a, b = lo_t, hi_t
    for _ in range(60):
        m = 0.5 * (a + b)
        vm = v_lo + (v_hi - v_lo) * (m - lo_t) / (hi_t - lo_t)
        if vm >= 0:
            b = m
        else:
            a = m
    return float(b)


def grid_csv(spec: ReactionSpec, values: np.ndarray, name="value", path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    names = [f"x{i + 1}" for i in range(len(spec.axes))]
    w.writerow(names + [name])
    mesh = spec.mesh
    flat = [m.ravel() for m in mesh]
    vals = np.asarray(values).ravel()
    for j in range(vals.size):
        w.writerow([repr(float(f[j])) for f in flat] + [repr(float(vals[j]))])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    return text


def front_positions_csv(times, positions, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["t", "position"])
    for t, p in zip(times, positions):
        w.writerow([repr(float(t)), repr(float(p))])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    return text
