"""Acceptance checks.

Each check takes a parameter dict (from a bundled fixture or a user config),
a root seed and an optional output directory, and returns a list of
:class:`Check` records. :data:`CHECKS` maps check names to functions; the
bundled fixtures under ``fwlab/fixtures`` name the check they drive.
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np

from .rng import RngStream


@dataclass
class Check:
    name: str
    passed: bool
    measured: object = None
    expected: object = None
    tolerance: object = None
    detail: str = ""

    def to_dict(self):
        return {k: _plain(v) for k, v in asdict(self).items()}


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_plain(u) for u in v]
    if isinstance(v, dict):
        return {str(k): _plain(u) for k, u in v.items()}
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def rel_check(name, measured, expected, tol, detail=""):
    err = abs(measured - expected) / abs(expected)
    return Check(name, bool(err <= tol), float(measured), float(expected), f"rel {tol}",
                 detail or f"relative error {err:.4g}")


def abs_check(name, measured, expected, tol, detail=""):
    err = abs(measured - expected)
    return Check(name, bool(err <= tol), float(measured), float(expected), f"abs {tol}",
                 detail or f"absolute error {err:.4g}")


def bound_check(name, measured, bound, detail=""):
    return Check(name, bool(measured <= bound), float(measured), f"<= {bound}", None, detail)


class OutDir(str):
    """Output directory path that remembers which artifacts were written."""

    def __new__(cls, path):
        obj = super().__new__(cls, path)
        obj.written = []
        return obj


def _write(out, name, text):
    if out is None:
        return
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, name), "w", newline="", encoding="utf-8") as fh:
        fh.write(text)
    if isinstance(out, OutDir):
        out.written.append(name)


def _two_well_field(box, nx, cap, source="x2^2/2+x1^4/4-x1^2/2"):
    from .reeb import ScalarField2D, build_reeb_graph
    f = ScalarField2D.from_source(source, tuple(box), int(nx))
    return f, build_reeb_graph(f, cap=cap)


# ---------------------------------------------------------------------------
# 1. quasipotential by action minimization

def check_quasipotential(p, seed, out=None):
    from .action import minimize_action, path_csv
    from .dynamics import DiffusionSpec
    spec = DiffusionSpec.from_sources(p["drift"], variables=p.get("variables"))
    res = minimize_action(spec, p["A"], p["B"], N=p.get("N", 200), iters=p.get("iters", 4000),
                          seed=seed)
    _write(out, "path.csv", path_csv(res))
    return [rel_check("action value vs 2*dU", res.value, p["expected"], p.get("tol", 0.03),
                      f"T*={res.T:.3g}, converged={res.converged}")]


# ---------------------------------------------------------------------------
# 2. exit-time slope

def check_exit_slope(p, seed, out=None):
    from .dynamics import DiffusionSpec, Interval, first_exit_ensemble
    rows, inv, logs, checks = [], [], [], []
    for k, eps in enumerate(p["eps"]):
        spec = DiffusionSpec.from_sources(p["drift"], eps=eps, variables=p.get("variables"))
        r = first_exit_ensemble(spec, p["x0"], Interval(*p["interval"]), p["dt"], p["T_max"],
                                RngStream(seed, f"dynamics:exit:{k}"), n_paths=p["n_paths"])
        exits = int(np.sum(~r.timed_out))
        checks.append(Check(f"exits at eps={eps}", exits >= p.get("min_exits", 2000), exits,
                            f">= {p.get('min_exits', 2000)}"))
        m = float(np.mean(r.tau[~r.timed_out]))
        rows.append((eps, m, exits))
        inv.append(1.0 / eps)
        logs.append(math.log(m))
    slope = float(np.polyfit(inv, logs, 1)[0])
    _write(out, "exit_times.csv", "eps,mean_tau,exits\r\n" + "".join(
        f"{e!r},{m!r},{n}\r\n" for e, m, n in rows))
    checks.insert(0, rel_check("slope of log E[tau] vs 1/eps", slope, p["expected"], p.get("tol", 0.15)))
    return checks


# ---------------------------------------------------------------------------
# 3. hierarchy of cycles vs matrix-exponential oracle

def check_hierarchy_oracle(p, seed, out=None):
    from .cycles import build_hierarchy, metastable_profile, oracle_distribution, random_generic_v
    rng = np.random.default_rng(seed)
    eps_list = p.get("eps", [0.05, 0.02, 0.01])
    gap = p.get("gap", 0.1)
    cases = fails = 0
    first_fail = ""
    for trial in range(p.get("n_matrices", 20)):
        ell = int(rng.integers(2, p.get("ell_max", 6) + 1))
        V = random_generic_v(ell, rng, margin=p.get("margin", 0.1))
        hier = build_hierarchy(V)
        for i in range(ell):
            prof = metastable_profile(hier, i)
            top = (max(prof.thresholds) if prof.thresholds else 0.0) + 1.0
            drawn = 0
            while drawn < p.get("lams_per_state", 10):
                lam = float(rng.uniform(0.0, top))
                if prof.distance_to_threshold(lam) < gap:
                    continue
                drawn += 1
                pred = prof.state_at(lam)
                m = [oracle_distribution(V, i, lam, e)[pred] for e in eps_list]
                cases += 1
                ok = m[-1] >= p.get("mass", 0.9) and all(b >= a - 1e-9 for a, b in zip(m, m[1:]))
                if not ok:
                    fails += 1
                    if not first_fail:
                        first_fail = f"trial {trial}, i={i}, lam={lam:.3f}, masses {m}"
    return [Check("hierarchy predictions confirmed by oracle", fails == 0, f"{cases - fails}/{cases}",
                  "100%", None, first_fail)]


# ---------------------------------------------------------------------------
# 4. tree theorem

def check_tree_theorem(p, seed, out=None):
    from .markov import (arrows, decompose, eleven_state_family, invariant_measure_direct,
                         invariant_measure_tree, random_rate_family, rank_chain_json, rank_recursion)
    rng = np.random.default_rng(seed)
    worst, n_classes = 0.0, 0
    for _ in range(p.get("n_families", 50)):
        n = int(rng.integers(3, p.get("max_size", 8) + 1))
        r = random_rate_family(n, rng)
        d = decompose(arrows(r))
        for cl in d.classes + [tuple(range(n))]:
            for eps in p.get("eps", [0.5, 0.1]):
                a = invariant_measure_direct(r, cl, eps)
                b = invariant_measure_tree(r, cl, eps).nu
                worst = max(worst, float(np.abs(a - b).max()))
                n_classes += 1
    fam = eleven_state_family()
    d = decompose(arrows(fam))
    got = sorted(tuple(s + 1 for s in c) for c in d.classes)
    want = sorted(tuple(c) for c in p["eleven_state"]["classes"])
    got_t = sorted(s + 1 for s in d.transient)
    _write(out, "eleven_state_ranks.json", rank_chain_json(rank_recursion(fam)))
    return [
        bound_check("tree vs direct max difference", worst, p.get("tol", 1e-10),
                    f"{n_classes} class solves"),
        Check("eleven-state classes", got == want, got, want),
        Check("eleven-state transient", got_t == sorted(p["eleven_state"]["transient"]), got_t,
              sorted(p["eleven_state"]["transient"])),
    ]


# ---------------------------------------------------------------------------
# 5. averaged coefficients

def check_averaged_coefficients(p, seed, out=None):
    from .field_dsl import vector_field
    from .reeb import area_integral, divergence_of_flux, edge_coefficients
    checks = []
    ho = p["oscillator"]
    f, g = _two_well_field(ho["box"], ho["nx"], None, ho["H"])
    beta = vector_field(ho["beta"], ("x1", "x2"))
    z = np.linspace(*ho["z"])
    c = edge_coefficients(f, g, 0, None, beta, z_grid=z)
    checks.append(bound_check("T(z)=2pi max rel error", float(np.max(np.abs(c.T / (2 * np.pi) - 1))),
                              ho["tol_T"]))
    checks.append(bound_check("abar(z)=2z max rel error", float(np.max(np.abs(c.abar / (2 * z) - 1))),
                              ho["tol_coef"]))
    checks.append(bound_check("betabar(z)=-2z max rel error",
                              float(np.max(np.abs(c.betabar / (-2 * z) - 1))), ho["tol_coef"]))
    tw = p["two_well"]
    f2, g2 = _two_well_field(tw["box"], tw["nx"], tw["cap"], tw["H"])
    lap = divergence_of_flux(f2.H, None)
    worst = 0.0
    for e in g2.edges:
        top = e.z_hi if math.isfinite(e.z_hi) else g2.cap
        for s in tw["fractions"]:
            zz = e.z_lo + s * (top - e.z_lo)
            ce = edge_coefficients(f2, g2, e.id, None, None, z_grid=np.array([zz]))
            worst = max(worst, abs(ce.A[0] / area_integral(f2, g2, lap, e.id, zz) - 1))
    checks.append(bound_check("contour A vs divergence-theorem area integral", worst, tw["tol"]))
    _write(out, "oscillator_coefficients.csv", "z,T,abar,betabar\r\n" + "".join(
        f"{a!r},{b!r},{d!r},{e!r}\r\n" for a, b, d, e in zip(z, c.T, c.abar, c.betabar)))
    return checks


# ---------------------------------------------------------------------------
# 6. averaging principle end to end

def check_averaging_principle(p, seed, out=None):
    from scipy.stats import wasserstein_distance
    from .dynamics import DiffusionSpec, sde_ensemble
    from .field_dsl import vector_field
    from .graph_diffusion import GraphDiffusionSpec, GraphState, transition_law
    from .reeb import graph_json, project_Y
    f, g = _two_well_field(p["box"], p["nx"], p["cap"], p["H"])
    beta = vector_field(p["beta"], ("x1", "x2"))
    spec = GraphDiffusionSpec.from_reeb(f, g, None, beta, n_levels=p["n_levels"])
    sde = DiffusionSpec.from_sources(p["hamiltonian_flow"], beta=p["beta"], eps=p["eps"],
                                     variables=("x1", "x2"))
    X = sde_ensemble(sde, p["x0"], p["n_paths"], p["dt"], p["t"] / p["eps"],
                     RngStream(seed, "averaging:sde:0"), scheme="rk4")
    h, e = project_Y(f, g, X)
    h0, e0 = project_Y(f, g, np.asarray([p["x0"]], float))
    law = transition_law(spec, GraphState(int(e0[0]), float(h0[0])), p["t"], n=p.get("n_mesh", 200))
    v, w = law.marginal()
    w1 = float(wasserstein_distance(h, v, None, w))
    checks = [bound_check("W1(SDE H-marginal, graph H-marginal)", w1, p.get("tol_w1", 0.05))]
    for vert in g.saddles():
        gl = spec.gluing[vert.id]
        up = sum(gl.gamma[j] for j, s in gl.sign.items() if s > 0)
        down = sum(gl.gamma[j] for j, s in gl.sign.items() if s < 0)
        checks.append(rel_check(f"gluing symmetry at vertex {vert.id}", up, down, p.get("tol_gamma", 0.02)))
    _write(out, "reeb.json", graph_json(g, spec.coefficients.values(), spec.gluing.values()))
    _write(out, "coefficients.csv", "edge,z,T,abar,drift\r\n" + "".join(
        f"{k},{z!r},{t!r},{a!r},{d!r}\r\n" for k, c in sorted(spec.coefficients.items())
        for z, t, a, d in zip(c.z, c.T, c.abar, c.drift)))
    _write(out, "graph_marginal.csv", "h,mass\r\n" + "".join(f"{a!r},{b!r}\r\n" for a, b in zip(v, w)))
    _write(out, "sde_marginal.csv", "edge,h\r\n" + "".join(f"{int(a)},{b!r}\r\n" for a, b in zip(e, h)))
    return checks


# ---------------------------------------------------------------------------
# 7. Dirichlet limit

def check_dirichlet_limit(p, seed, out=None):
    from .dynamics import DiffusionSpec, Predicate, first_exit_ensemble
    from .field_dsl import vector_field
    from .graph_diffusion import GraphBVP, GraphDiffusionSpec, solve_dirichlet
    from .reeb import project_Y
    f, g = _two_well_field(p["box"], p["nx"], p["cap"], p["H"])
    beta = vector_field(p["beta"], ("x1", "x2"))
    spec = GraphDiffusionSpec.from_reeb(f, g, None, beta, n_levels=p["n_levels"])
    inner, outer = p["inner_level"], p["outer_level"]
    psi_left, psi_right, psi_outer = p["psi"]
    left, right = [e for e in g.edges if e.hi is not None and len(e.minima) == 1]
    if g.vertices[left.minima[0]].position[0] > 0:
        left, right = right, left
    outer_edge = next(e for e in g.edges if len(e.minima) > 1)
    bvp = GraphBVP(cuts={left.id: {"lo": (inner, psi_left)}, right.id: {"lo": (inner, psi_right)},
                         outer_edge.id: {"hi": (outer, psi_outer)}})
    sol = solve_dirichlet(spec, bvp)
    Hv = f
    sde = DiffusionSpec.from_sources(p["hamiltonian_flow"], beta=p["beta"], eps=p["eps"],
                                     variables=("x1", "x2"))
    dom = Predicate(lambda X: (Hv(X) < outer) & (Hv(X) > inner))
    worst, rows = 0.0, []
    for k, x in enumerate(p["probes"]):
        r = first_exit_ensemble(sde, x, dom, p["dt"], p["t_max"] / p["eps"],
                                RngStream(seed, f"dirichlet:mc:{k}"), n_paths=p["n_paths"],
                                scheme="rk4")
        ex = r.exit_points
        psi = np.where(Hv(ex) > 0.5 * (inner + outer), psi_outer,
                       np.where(ex[:, 0] > 0, psi_right, psi_left))
        mc = float(psi[~r.timed_out].mean())
        hh, ee = project_Y(f, g, np.asarray([x], float))
        u = float(sol(int(ee[0]), float(hh[0])))
        worst = max(worst, abs(u - mc))
        rows.append((x[0], x[1], u, mc, float(psi.std() / math.sqrt(len(psi))), int(r.timed_out.sum())))
    _write(out, "dirichlet_probes.csv", "x1,x2,graph,mc,mc_se,timeouts\r\n" + "".join(
        f"{a!r},{b!r},{c!r},{d!r},{e!r},{t}\r\n" for a, b, c, d, e, t in rows))
    _write(out, "dirichlet_solution.csv", sol.to_csv())
    return [bound_check("max |graph solve - Monte Carlo| over probes", worst, p.get("tol", 0.05)),
            bound_check("timed-out paths", sum(r[-1] for r in rows), 0)]


# ---------------------------------------------------------------------------
# 8. Cauchy-limit predictors

def check_cauchy_predictors(p, seed, out=None):
    from .cycles import predict_linear_cauchy, predict_nonlinear_cauchy
    checks = []
    g1, g2 = p["g"]
    bad = []
    for V12, V21, basin, lam, want in p["truth_table"]:
        got = predict_linear_cauchy(V12, V21, basin, lam, g1, g2)
        if got != {"g1": g1, "g2": g2}[want]:
            bad.append((V12, V21, basin, lam, want, got))
    checks.append(Check("linear Cauchy truth table", not bad, len(p["truth_table"]) - len(bad),
                        len(p["truth_table"]), None, str(bad) if bad else ""))
    z = np.linspace(g1, g2, p.get("n_z", 101))
    V12 = p["v_scale"] * (g2 - z)
    V21 = p["v_scale"] * (z - g1)
    mid = 0.5 * (g1 + g2)
    wbad = []
    zbar = None
    for basin in (1, 2):
        for lam in p["lams"]:
            r = predict_nonlinear_cauchy(z, V12, V21, basin, lam, g1, g2)
            zbar = r.z_bar
            ws = np.asarray(r.weights, float)
            if np.any(ws < 0) or abs(ws.sum() - 1) > 1e-12:
                wbad.append((basin, lam, r.weights))
    checks.append(Check("nonlinear weights are probability vectors", not wbad, len(wbad), 0, None,
                        str(wbad) if wbad else ""))
    checks.append(abs_check("z_bar at symmetric midpoint", zbar, mid, 1e-12))
    return checks


# ---------------------------------------------------------------------------
# 9. Huygens front

def check_huygens_front(p, seed, out=None):
    from .fronts import (ReactionSpec, equivalent_radius, front_field, grid_csv, interface_position,
                         pde_solve_1d)
    hx, dt, t = p["hx"], p["dt"], p["t"]
    box = [tuple(b) for b in p["box"]]
    disc = lambda x, y: x ** 2 + y ** 2 <= p["support_radius"] ** 2
    radii = {}
    for c in (p["c"], 2 * p["c"]):
        s = ReactionSpec.on_box(box, hx, c, disc)
        ff = front_field(s, t, dt, with_v0=False)
        radii[c] = equivalent_radius(ff.front[-1], hx)
        if c == p["c"]:
            _write(out, "front_mask.csv", grid_csv(s, ff.front[-1].astype(float), "inside"))
    r0 = p["support_radius"]
    exact = r0 + t * math.sqrt(2 * p["c"] * p["a"])
    ratio = (radii[2 * p["c"]] - r0) / (radii[p["c"]] - r0)
    s1 = ReactionSpec.on_box([tuple(p["pde"]["interval"])], p["pde"]["hx"], p["c"], lambda x: x <= 0)
    t1, t2 = p["pde"]["times"]
    r = pde_solve_1d(s1, p["pde"]["eps"], t2, record_times=[t1])
    pos = lambda tt: interface_position(r.x, r.u[int(np.argmin(np.abs(r.times - tt)))])
    speed = (pos(t2) - pos(t1)) / (t2 - t1)
    return [rel_check("front radius at t vs 1+sqrt(2)", radii[p["c"]], exact, p.get("tol_radius", 0.05)),
            rel_check("advance ratio for doubled c", ratio, math.sqrt(2), p.get("tol_ratio", 0.03)),
            rel_check("1-D PDE interface speed", speed, math.sqrt(2 * p["c"] * p["a"]),
                      p.get("tol_speed", 0.10))]


# ---------------------------------------------------------------------------
# 10. phantom dynamics

def scan_ystar(f, sigma, ys, x_range, n_x=20001):
    """Independent y* by dense scanning: roots by sign change on an x grid,
    V by trapezoid sums of 2|f|/sigma^2, y* by linear interpolation of the
    first sign change of V_- - V_+."""
    x = np.linspace(*x_range, n_x)
    diff = []
    for y in ys:
        fx = f(x, np.full_like(x, y))
        idx = np.flatnonzero(np.sign(fx[:-1]) * np.sign(fx[1:]) < 0)
        # roots landing exactly on a grid node
        r = np.sort(np.concatenate([x[fx == 0],
                                    x[idx] - fx[idx] * (x[idx + 1] - x[idx]) / (fx[idx + 1] - fx[idx])]))
        if r.size != 3:
            raise ValueError(f"expected three roots at y={y}, found {r.size}")

        def v(a, b):
            xx = np.linspace(min(a, b), max(a, b), n_x)
            q = 2 * np.abs(f(xx, np.full_like(xx, y))) / sigma(xx, np.full_like(xx, y)) ** 2
            return float(np.sum(0.5 * (q[1:] + q[:-1]) * np.diff(xx)))

        diff.append(v(r[1], r[0]) - v(r[1], r[2]))
    diff = np.asarray(diff)
    k = np.flatnonzero(np.sign(diff[:-1]) * np.sign(diff[1:]) <= 0)
    if k.size == 0:
        raise ValueError("no sign change of V_- - V_+ on the scan grid")
    k = int(k[0])
    return float(ys[k] - diff[k] * (ys[k + 1] - ys[k]) / (diff[k + 1] - diff[k]))


def check_phantom(p, seed, out=None):
    from .phantom import SlowFastSpec, analyze, simulate_verify
    y_grid = np.linspace(*p["y_grid"])
    spec = SlowFastSpec.from_sources(p["f"], p["sigma"], y_grid=y_grid, x_range=tuple(p["x_range"]),
                                     schedule=tuple(tuple(s) for s in p["schedule"]))
    res = analyze(spec)
    oracle = scan_ystar(spec.f_xy, spec.sigma_xy, np.linspace(*p["y_grid"][:2], p["n_scan_y"]),
                        tuple(p["x_range"]))
    cell = float(y_grid[1] - y_grid[0])
    res.verification = simulate_verify(spec, spec.schedule, p["T"], p["n_paths"],
                                       RngStream(seed, "phantom:run"), x0=p["x0"], y0=p["y0"],
                                       y_star=res.y_star, lam=res.lam)
    fin = res.verification[-1]
    _write(out, "phantom.json", res.to_json())
    _write(out, "masses.csv", res.masses_csv())
    return [abs_check("y* vs scan oracle", res.y_star, oracle, cell, f"grid cell {cell:.4g}"),
            abs_check("mass near Q- at finest point", fin.mass_minus, res.weights.p_minus,
                      p.get("tol", 0.05)),
            abs_check("mass near Q+ at finest point", fin.mass_plus, res.weights.p_plus,
                      p.get("tol", 0.05)),
            Check("total near-Q mass at finest point", fin.total >= 0.9, fin.total, ">= 0.9"),
            abs_check("y mean vs y* at finest point", fin.y_mean, res.y_star, 0.05)]


# ---------------------------------------------------------------------------
# 11. property suites

def check_properties(p, seed, out=None):
    checks = []
    checks.append(_prop_gronwall(p["gronwall"]))
    checks.append(_prop_action(p["action"], seed))
    checks.append(_prop_max_principle(p["max_principle"], seed))
    checks.append(_prop_front_monotone(p["front"]))
    checks.append(_prop_determinism(p["determinism"], seed))
    return checks


def _prop_gronwall(cases):
    from .dynamics import DiffusionSpec, gronwall_bound, integrate_ode
    bad = []
    for c in cases:
        spec = DiffusionSpec.from_sources(c["drift"], beta=c["beta"], eps=c["eps"])
        base = spec.with_eps(0.0)
        x = integrate_ode(spec, c["x0"], c["dt"], c["t"]).states
        y = integrate_ode(base, c["x0"], c["dt"], c["t"]).states
        times = np.arange(len(x)) * c["dt"]
        dev = np.maximum.accumulate(np.linalg.norm(x - y, axis=1))
        bound = gronwall_bound(c["eps"], c["beta_bound"], c["lipschitz"], times)
        if np.any(dev > bound + 1e-12):
            bad.append(c["drift"])
    return Check("Gronwall pathwise bound (sigma=0)", not bad, len(bad), 0, None, str(bad) if bad else "")


def _prop_action(cases, seed):
    from .action import PathDiscretization, action
    from .dynamics import DiffusionSpec
    rng = np.random.default_rng(seed)
    bad = total = 0
    for c in cases:
        spec = DiffusionSpec.from_sources(c["drift"], sigma=c.get("sigma"))
        for _ in range(c["n_paths"]):
            pts = np.cumsum(rng.normal(scale=0.3, size=(c["N"] + 1, spec.dim)), axis=0)
            val = action(spec, PathDiscretization(pts, float(rng.uniform(0.2, 5.0))))
            total += 1
            bad += int(not val >= 0.0)
    return Check("action nonnegativity", bad == 0, f"{total - bad}/{total}", "100%")


def _prop_max_principle(p, seed):
    from .graph_diffusion import GraphBVP, solve_dirichlet, y_graph
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(p["n_random"]):
        Y = y_graph(abar=tuple(rng.uniform(0.5, 2, 3)), betabar=tuple(rng.uniform(-1, 1, 3)),
                    gamma=tuple(rng.uniform(0.5, 2, 3)))
        psi = rng.uniform(-1, 1, 3)
        bvp = GraphBVP(vertex_values={0: psi[0], 2: psi[1], 3: psi[2]}, n=p["n"])
        sol = solve_dirichlet(Y, bvp)
        lo, hi = psi.min(), psi.max()
        vals = np.concatenate(list(sol.v.values()))
        bad += int(vals.min() < lo - 1e-10 or vals.max() > hi + 1e-10)
    return Check("maximum principle on graph solves", bad == 0, bad, 0)


def _prop_front_monotone(p):
    from .fronts import ReactionSpec, front_field
    s = ReactionSpec.on_box([tuple(b) for b in p["box"]], p["hx"], p["c"],
                            lambda x, y: x ** 2 + y ** 2 <= p["support_radius"] ** 2)
    ff = front_field(s, p["t"], p["dt"], with_v0=False)
    bad = sum(int(np.any(a & ~b)) for a, b in zip(ff.front, ff.front[1:]))
    return Check("front monotone in t", bad == 0, bad, 0)


def _prop_determinism(p, seed):
    from .dynamics import DiffusionSpec, Interval, first_exit_ensemble, sde_ensemble
    from .graph_diffusion import GraphState, simulate, y_graph
    from .phantom import SlowFastSpec, simulate_verify

    def runs():
        ou = DiffusionSpec.from_sources(["-x1"], eps=0.5)
        a = sde_ensemble(ou, [1.0], 200, 0.01, 1.0, RngStream(seed, "det:sde"))
        dw = DiffusionSpec.from_sources(["-(x1^3-x1)"], eps=0.3)
        b = first_exit_ensemble(dw, [-1.0], Interval(-2.0, 0.0), 0.01, 50.0, RngStream(seed, "det:exit"),
                                n_paths=100).tau
        c = simulate(y_graph(), GraphState(0, -0.5), 1e-3, 1.0, 0.1, RngStream(seed, "det:graph"),
                     n_paths=200, absorbing=[(1, 1.0), (2, 1.0)]).h
        sf = SlowFastSpec.from_sources(p["phantom_f"], 1.0, y_grid=np.linspace(-0.2, 0.2, 3),
                                       x_range=(-5, 5))
        d = simulate_verify(sf, [(0.05, 0.1)], 0.05, 50, RngStream(seed, "det:phantom"), 2.0, 0.0,
                            y_star=0.0, lam=1.0, strict=False)[0].mass_plus
        return [np.asarray(v, float).tobytes() for v in (a, b, c, d)]

    first, second = runs(), runs()
    bad = sum(int(x != y) for x, y in zip(first, second))
    return Check("Monte Carlo determinism under fixed seeds", bad == 0, bad, 0)


CHECKS = {
    "quasipotential": check_quasipotential,
    "exit_slope": check_exit_slope,
    "hierarchy_oracle": check_hierarchy_oracle,
    "tree_theorem": check_tree_theorem,
    "averaged_coefficients": check_averaged_coefficients,
    "averaging_principle": check_averaging_principle,
    "dirichlet_limit": check_dirichlet_limit,
    "cauchy_predictors": check_cauchy_predictors,
    "huygens_front": check_huygens_front,
    "phantom": check_phantom,
    "properties": check_properties,
}


# ---------------------------------------------------------------------------
# bundled fixtures

def fixture_names():
    root = resources.files("fwlab") / "fixtures"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_fixture(name):
    root = resources.files("fwlab") / "fixtures"
    return json.loads((root / f"{name}.json").read_text(encoding="utf-8"))


def run_check(cfg, seed=None, out=None):
    """Run one verify config; returns ``(checks, timing)``."""
    fn = CHECKS[cfg["check"]]
    seed = cfg["seed"] if seed is None else seed
    t0 = time.perf_counter()
    checks = fn(cfg.get("params", {}), seed, out)
    elapsed = time.perf_counter() - t0
    budget = cfg.get("budget_s")
    timing = {"elapsed_s": elapsed, "budget_s": budget,
              "passed": budget is None or elapsed <= budget}
    return checks, timing
