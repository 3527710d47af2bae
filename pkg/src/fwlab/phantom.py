"""
Phantom equilibria of slow-fast systems
=======================================

    delta dX = f(X, Y) dt + sqrt(eps) sigma(X, Y) dW,     dY = X dt

For frozen ``y`` the fast equation has stable equilibria ``X_-(y) < 0`` and
``X_+(y) > 0`` separated by an unstable one ``X_0(y)``. Without noise ``Y``
drifts off to infinity; with noise and ``eps, delta -> 0`` in the right
regime the process settles near ``y*`` where the two barriers

    V_pm(y) = 2 int_{X_0(y)}^{X_pm(y)} f(x, y) / sigma^2(x, y) dx

coincide, and splits its mass between ``Q_- = (X_-(y*), y*)`` and
``Q_+ = (X_+(y*), y*)`` so that the mean slow velocity vanishes:
``P_- X_-(y*) + P_+ X_+(y*) = 0``.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .action import quasipotential_1d
from .field_dsl import FieldDef, scalar_field
from .rng import RngStream

__all__ = [
    "SlowFastSpec", "BranchTable", "VTables", "Weights", "VerifyPoint", "PhantomResult",
    "PhantomError", "ScheduleError", "branches", "roots_at", "v_at", "v_branches", "find_ystar",
    "weights", "admissibility", "simulate_verify", "analyze",
]


class PhantomError(ValueError):
    pass


class ScheduleError(ValueError):
    pass


@dataclass
class SlowFastSpec:
    f: FieldDef  # scalar field of (x, y)
    sigma: FieldDef | float = 1.0
    eps: float = 1e-3
    delta: float = 1e-2
    schedule: tuple = ()
    y_grid: np.ndarray = field(default_factory=lambda: np.linspace(-1, 1, 41))
    x_range: tuple = (-10.0, 10.0)
    n_scan: int = 4001

    @classmethod
    def from_sources(cls, f, sigma="1", variables=("x", "y"), **kw):
        s = scalar_field(sigma, variables, "sigma") if isinstance(sigma, str) else float(sigma)
        if "y_grid" in kw:
            kw["y_grid"] = np.asarray(kw["y_grid"], float)
        return cls(scalar_field(f, variables, "f"), s, **kw)

    def f_xy(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return self.f.scalar(np.stack([x, y], axis=-1))

    def sigma_xy(self, x, y):
        if isinstance(self.sigma, FieldDef):
            x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
            return self.sigma.scalar(np.stack([x, y], axis=-1))
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, float(self.sigma))

    def dfdx(self, x, y):
        J = self.f.jacobian()
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return J(np.stack([x, y], axis=-1))[..., 0, 0]


@dataclass
class BranchTable:
    y: np.ndarray
    x_minus: np.ndarray
    x_zero: np.ndarray
    x_plus: np.ndarray

    def max_jump(self):
        return float(max(np.max(np.abs(np.diff(a))) for a in (self.x_minus, self.x_zero, self.x_plus)))


def roots_at(spec: SlowFastSpec, y: float, tol: float = 1e-10):
    """The three roots of ``f(., y)``, checked for order and sign pattern."""
    xs = np.linspace(spec.x_range[0], spec.x_range[1], spec.n_scan)
    fx = spec.f_xy(xs, y)
    s = np.sign(fx)
    idx = np.flatnonzero(s[:-1] * s[1:] < 0)
    exact = np.flatnonzero(s == 0)
    roots = [float(xs[i]) for i in exact]
    for i in idx:
        roots.append(brentq(lambda x: float(spec.f_xy(x, y)), xs[i], xs[i + 1], xtol=tol, rtol=1e-15))
    roots = sorted(set(roots))
    if len(roots) != 3:
        raise PhantomError(f"f(., {y}) has {len(roots)} roots in {spec.x_range}, expected 3")
    xm, x0, xp = roots
    if not (xm < 0 < x0 < xp):
        raise PhantomError(f"roots at y={y} are not ordered X_- < 0 < X_0 < X_+: {roots}")
    probes = [xm - 0.5 * abs(xm) - 1e-3, 0.5 * (xm + x0), 0.5 * (x0 + xp), xp + 0.5 * abs(xp) + 1e-3]
    signs = np.sign(spec.f_xy(np.array(probes), y))
    if not np.array_equal(signs, [1, -1, 1, -1]):
        raise PhantomError(f"sign pattern of f(., {y}) is {signs.tolist()}, expected [+, -, +, -]")
    return xm, x0, xp


def branches(spec: SlowFastSpec) -> BranchTable:
    rows = np.array([roots_at(spec, float(y)) for y in spec.y_grid])
    return BranchTable(np.asarray(spec.y_grid, float), rows[:, 0], rows[:, 1], rows[:, 2])


def v_at(spec: SlowFastSpec, y: float, roots=None):
    """``(V_-(y), V_+(y))``."""
    xm, x0, xp = roots if roots is not None else roots_at(spec, y)

    def f(x):
        return float(spec.f_xy(x, y))

    def s2(x):
        return float(spec.sigma_xy(x, y)) ** 2

    vm = quasipotential_1d(f, s2, x0, xm)
    vp = quasipotential_1d(f, s2, x0, xp)
    if vm < 0 or vp < 0:
        raise PhantomError(f"negative barrier at y={y}: {vm}, {vp}")
    return vm, vp


@dataclass
class VTables:
    y: np.ndarray
    v_minus: np.ndarray
    v_plus: np.ndarray

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["y", "V_minus", "V_plus"])
        for row in zip(self.y, self.v_minus, self.v_plus):
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        return text


def v_branches(spec: SlowFastSpec, table: BranchTable | None = None) -> VTables:
    table = table or branches(spec)
    vals = np.array([v_at(spec, float(y), (a, b, c))
                     for y, a, b, c in zip(table.y, table.x_minus, table.x_zero, table.x_plus)])
    return VTables(table.y, vals[:, 0], vals[:, 1])


def find_ystar(spec: SlowFastSpec, tables: VTables, tol: float = 1e-8, mono_tol: float = 1e-12):
    """Root of ``V_+ - V_-``: bracketed on the tables, refined by bisection."""
    if np.any(np.diff(tables.v_plus) > mono_tol) or np.any(np.diff(tables.v_minus) < -mono_tol):
        raise PhantomError("V_+ must decrease and V_- increase along the y-grid")
    d = tables.v_plus - tables.v_minus
    idx = np.flatnonzero(np.sign(d[:-1]) * np.sign(d[1:]) <= 0)
    if idx.size == 0:
        raise PhantomError("V_+ - V_- does not change sign on the y-grid")
    a, b = float(tables.y[idx[0]]), float(tables.y[idx[0] + 1])

    def g(y):
        vm, vp = v_at(spec, y)
        return vp - vm

    ga = g(a)
    if ga == 0:
        b = a
    while b - a > tol:
        m = 0.5 * (a + b)
        gm = g(m)
        if gm == 0:
            a = b = m
            break
        if np.sign(gm) == np.sign(ga):
            a, ga = m, gm
        else:
            b = m
    y_star = 0.5 * (a + b)
    vm, vp = v_at(spec, y_star)
    lam = 0.5 * (vm + vp)
    if not lam > 0:
        raise PhantomError("Lambda must be positive")
    return y_star, lam


@dataclass
class Weights:
    p_minus: float
    p_plus: float
    x_minus: float
    x_plus: float
    literal_numerator: float
    literal_denominator: float
    literal_flag: str

    def to_dict(self):
        return asdict(self)


def weights(spec: SlowFastSpec, y_star: float) -> Weights:
    """Mass split between ``Q_-`` and ``Q_+``.

    The time-average of ``dY/dt = X`` must vanish at ``y*``, so
    ``P_- |X_-| = P_+ |X_+|``. The variant that weights by ``f`` on the
    branches is reported as well; it is 0/0 because ``f`` vanishes there.
    """
    xm, _, xp = roots_at(spec, y_star)
    sm, sp = abs(xm), abs(xp)
    if sm + sp == 0:
        raise PhantomError("zero denominator in the weights")
    fm, fp = float(spec.f_xy(xm, y_star)), float(spec.f_xy(xp, y_star))
    den = fm + fp
    flag = "f vanishes on both branches: 0/0, not used" if abs(den) < 1e-8 and abs(fm) < 1e-8 \
        else "defined"
    return Weights(sp / (sm + sp), sm / (sm + sp), xm, xp, fm, den, flag)


def admissibility(eps: float, delta: float, lam: float, margin: float = 1.1, ratio_max: float = 0.5,
                  dt: float | None = None) -> dict:
    ratio = eps / delta
    drive = ratio * np.log(1.0 / delta)
    out = {"eps": eps, "delta": delta, "ratio": ratio, "drive": drive, "needed": margin * lam,
           "ratio_small": bool(ratio <= ratio_max), "drive_ok": bool(drive > margin * lam)}
    if dt is not None:
        out["dt_ok"] = bool(dt <= delta / 50 * (1 + 1e-12))
    out["admissible"] = all(v for k, v in out.items() if k.endswith(("_ok", "_small")))
    return out


@dataclass
class VerifyPoint:
    eps: float
    delta: float
    dt: float
    admissible: bool
    mass_minus: float
    mass_plus: float
    y_mean: float
    tv: float

    @property
    def total(self):
        return self.mass_minus + self.mass_plus


def simulate_verify(spec: SlowFastSpec, schedule, T: float, n_paths: int, rng: RngStream,
                    x0: float, y0: float, y_star: float | None = None, lam: float | None = None,
                    w: Weights | None = None, radius: float = 0.1, dt_factor: float = 50.0,
                    strict: bool = True, ratio_max: float = 0.5) -> list:
    """Euler-Maruyama for the slow-fast system at each ``(eps, delta)``;
    reports the fraction of paths within ``radius`` of ``Q_-`` and ``Q_+`` at ``T``."""
    if y_star is None or lam is None:
        y_star, lam = find_ystar(spec, v_branches(spec))
    w = w or weights(spec, y_star)
    qm = np.array([w.x_minus, y_star])
    qp = np.array([w.x_plus, y_star])
    out = []
    for k, (eps, delta) in enumerate(schedule):
        dt = delta / dt_factor
        adm = admissibility(eps, delta, lam, dt=dt, ratio_max=ratio_max)
        if strict and not adm["admissible"]:
            raise ScheduleError(f"schedule point {k} ({eps}, {delta}) is not admissible: {adm}")
        sub = rng.substream(f"phantom:verify:{k}")
        n = int(np.ceil(T / dt - 1e-9))
        x = np.full(n_paths, float(x0))
        y = np.full(n_paths, float(y0))
        a = dt / delta
        b = np.sqrt(eps * dt) / delta
        for _ in range(n):
            xi = sub.normal(n_paths)
            fx = spec.f_xy(x, y)
            sg = spec.sigma_xy(x, y)
            y = y + x * dt
            x = x + a * fx + b * sg * xi
            if not np.all(np.isfinite(x)):
                raise PhantomError("slow-fast simulation diverged; reduce dt")
        pts = np.stack([x, y], axis=1)
        mm = float(np.mean(np.linalg.norm(pts - qm, axis=1) < radius))
        mp = float(np.mean(np.linalg.norm(pts - qp, axis=1) < radius))
        tv = 0.5 * (abs(mm - w.p_minus) + abs(mp - w.p_plus) + (1.0 - mm - mp))
        out.append(VerifyPoint(eps, delta, dt, adm["admissible"], mm, mp, float(np.mean(y)), tv))
    return out


@dataclass
class PhantomResult:
    tables: VTables
    y_star: float
    lam: float
    weights: Weights
    admissibility: list = field(default_factory=list)
    verification: list = field(default_factory=list)

    def to_json(self):
        doc = {
            "y_star": self.y_star, "Lambda": self.lam,
            "V_minus": self.tables.v_minus.tolist(), "V_plus": self.tables.v_plus.tolist(),
            "y": self.tables.y.tolist(), "weights": self.weights.to_dict(),
            "admissibility": self.admissibility,
            "verification": [dict(asdict(v), total=v.total) for v in self.verification],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def masses_csv(self, path=None):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\r\n")
        wr.writerow(["eps", "delta", "mass_minus", "mass_plus", "P_minus", "P_plus", "tv"])
        for v in self.verification:
            wr.writerow([repr(float(q)) for q in (v.eps, v.delta, v.mass_minus, v.mass_plus,
                                                  self.weights.p_minus, self.weights.p_plus, v.tv)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        return text


def analyze(spec: SlowFastSpec) -> PhantomResult:
    table = branches(spec)
    vt = v_branches(spec, table)
    y_star, lam = find_ystar(spec, vt)
    w = weights(spec, y_star)
    adm = [admissibility(e, d, lam) for e, d in spec.schedule]
    return PhantomResult(vt, y_star, lam, w, adm)
