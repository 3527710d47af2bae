"""Command-line runner.

``fwlab run <config.json> [--out DIR] [--seed N] [--threads K]`` executes one
experiment and writes its artifacts plus ``report.json``;
``fwlab verify [--filter NAME]`` runs the bundled acceptance fixtures.
Exit code 0 means every check passed.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .field_dsl import FieldError
from .rng import RngStream
from .verify import CHECKS, Check, OutDir, abs_check, fixture_names, load_fixture, run_check

KINDS = ("simulate", "exit", "quasipotential", "hierarchy", "markov", "reeb", "graph-solve",
         "front", "phantom", "verify")


class ConfigError(ValueError):
    pass


_MISSING = object()


def need(cfg, path, types=None, default=_MISSING, where=""):
    """Value at dotted ``path`` in ``cfg``; a missing required key raises
    :class:`ConfigError` naming the full key path (``where`` is the path of
    ``cfg`` itself inside the document)."""
    full = f"{where}.{path}" if where else path
    cur = cfg
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            if default is not _MISSING:
                return default
            raise ConfigError(f"missing required key '{full}'")
        cur = cur[part]
    if types is not None and (not isinstance(cur, types) or isinstance(cur, bool)):
        names = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise ConfigError(f"key '{full}' must be {names}, got {type(cur).__name__}")
    return cur


NUM = (int, float)


def _write(out, name, text, artifacts):
    path = os.path.join(out, name)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)
    artifacts.append(name)


def _csv(header, rows):
    return ",".join(header) + "\r\n" + "".join(
        ",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r) + "\r\n"
        for r in rows)


def _grid_eval(source, names, mesh):
    from .field_dsl import scalar_field
    fd = scalar_field(source, names)
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return np.asarray(fd.scalar(pts), float).reshape(mesh[0].shape)


def _expect(cfg, metrics):
    """Optional ``expect: {metric: {"value": v, "tol": t}}`` checks."""
    checks = []
    for key, spec in sorted(need(cfg, "expect", dict, {}).items()):
        if key not in metrics:
            raise ConfigError(f"expect.{key}: no such metric (have {sorted(metrics)})")
        checks.append(abs_check(key, metrics[key], need(spec, "value", NUM, where=f"expect.{key}"),
                                need(spec, "tol", NUM, where=f"expect.{key}")))
    return checks


# ---------------------------------------------------------------------------
# pipelines: each returns (checks, metrics)

def _diffusion(cfg, eps=None):
    from .dynamics import DiffusionSpec
    return DiffusionSpec.from_sources(need(cfg, "drift", list), beta=need(cfg, "beta", list, None),
                                      sigma=need(cfg, "sigma", list, None),
                                      eps=need(cfg, "eps", NUM, 0.0) if eps is None else eps,
                                      variables=need(cfg, "variables", list, None))


def run_simulate(cfg, seed, out, art):
    from .dynamics import integrate_ode, integrate_sde, sde_ensemble, trajectory_csv
    spec = _diffusion(cfg)
    x0, dt, T = need(cfg, "x0", list), need(cfg, "dt", NUM), need(cfg, "T", NUM)
    n_paths = need(cfg, "n_paths", int, 1)
    scheme = need(cfg, "scheme", str, "euler")
    rng = RngStream(seed, "dynamics:simulate:0")
    if n_paths == 1:
        traj = integrate_sde(spec, x0, dt, T, rng, scheme) if spec.eps else integrate_ode(spec, x0, dt, T)
        _write(out, "trajectory.csv", trajectory_csv(traj), art)
        X = traj.states[-1:]
    else:
        X = sde_ensemble(spec, x0, n_paths, dt, T, rng, scheme)
        _write(out, "final_states.csv", _csv([f"x{i + 1}" for i in range(spec.dim)], X), art)
    metrics = {}
    for i in range(spec.dim):
        metrics[f"mean[{i}]"] = float(X[:, i].mean())
        metrics[f"var[{i}]"] = float(X[:, i].var())
    return _expect(cfg, metrics), metrics


def _domain(d):
    from .dynamics import Ball, Box, Interval, Polygon
    if not isinstance(d, dict) or len(d) != 1:
        raise ConfigError("key 'domain' must be one of {interval|box|ball|polygon: ...}")
    (k, v), = d.items()
    if k == "interval":
        return Interval(*v)
    if k == "box":
        return Box(tuple(v[0]), tuple(v[1]))
    if k == "ball":
        return Ball(tuple(v["center"]), v["radius"])
    if k == "polygon":
        return Polygon(tuple(tuple(p) for p in v))
    raise ConfigError(f"domain.{k}: unknown domain type")


def run_exit(cfg, seed, out, art):
    from .dynamics import first_exit_ensemble
    eps_list = need(cfg, "eps", (int, float, list))
    eps_list = eps_list if isinstance(eps_list, list) else [eps_list]
    dom = _domain(need(cfg, "domain", dict))
    rows, metrics = [], {}
    for k, eps in enumerate(eps_list):
        r = first_exit_ensemble(_diffusion(cfg, eps), need(cfg, "x0", list), dom, need(cfg, "dt", NUM),
                                need(cfg, "T_max", NUM), RngStream(seed, f"dynamics:exit:{k}"),
                                n_paths=need(cfg, "n_paths", int, 1), scheme=need(cfg, "scheme", str, "euler"))
        done = ~r.timed_out
        m = float(r.tau[done].mean()) if done.any() else math.nan
        rows.append((eps, m, int(done.sum()), int(r.timed_out.sum())))
        metrics[f"mean_tau[{k}]"] = m
        metrics[f"eps_log_mean_tau[{k}]"] = eps * math.log(m) if m > 0 else math.nan
    if len(eps_list) > 1:
        metrics["slope"] = float(np.polyfit([1 / e for e in eps_list], [math.log(r[1]) for r in rows], 1)[0])
    _write(out, "exit_times.csv", _csv(["eps", "mean_tau", "exits", "timeouts"], rows), art)
    return _expect(cfg, metrics), metrics


def run_quasipotential(cfg, seed, out, art):
    from .action import minimize_action, path_csv
    res = minimize_action(_diffusion(cfg), need(cfg, "A", list), need(cfg, "B", list),
                          N=need(cfg, "N", int, 200), iters=need(cfg, "iters", int, 4000), seed=seed)
    _write(out, "path.csv", path_csv(res), art)
    metrics = {"value": res.value, "T": res.T, "converged": float(res.converged)}
    return _expect(cfg, metrics), metrics


def run_hierarchy(cfg, seed, out, art):
    from .cycles import build_hierarchy, metastable_profile, oracle_distribution
    V = np.asarray(need(cfg, "V", list), float)
    hier = build_hierarchy(V)
    _write(out, "hierarchy.json", hier.to_json(), art)
    profiles = [metastable_profile(hier, i).to_dict() for i in range(len(V))]
    _write(out, "profiles.json", json.dumps(profiles, indent=2), art)
    metrics, checks = {}, []
    eps = need(cfg, "oracle_eps", NUM, None)
    for k, q in enumerate(need(cfg, "queries", list, [])):
        i, lam = need(q, "initial", int, where=f"queries[{k}]"), need(q, "lambda", NUM, where=f"queries[{k}]")
        state = metastable_profile(hier, i).state_at(lam)
        metrics[f"state[{i},{lam}]"] = state
        if eps is not None:
            mass = float(oracle_distribution(V, i, lam, eps)[state])
            metrics[f"oracle_mass[{i},{lam}]"] = mass
            checks.append(Check(f"oracle mass at predicted state (i={i}, lambda={lam})", mass >= 0.9,
                                mass, ">= 0.9"))
    return checks + _expect(cfg, metrics), metrics


def run_markov(cfg, seed, out, art):
    from .markov import (RateFamily, arrows, decompose, eleven_state_family, invariant_measure_direct,
                         invariant_measure_tree, rank_chain_json, rank_recursion)
    if need(cfg, "family", str, None) == "eleven-state":
        fam = eleven_state_family()
    else:
        fam = RateFamily(np.asarray(need(cfg, "c", list), float), np.asarray(need(cfg, "k", list), float))
    d = decompose(arrows(fam))
    _write(out, "decomposition.json", json.dumps(d.to_dict(), indent=2), art)
    _write(out, "rank_chains.json", rank_chain_json(rank_recursion(fam)), art)
    eps = need(cfg, "eps", NUM, 0.1)
    worst = 0.0
    for cl in d.classes:
        worst = max(worst, float(np.abs(invariant_measure_direct(fam, cl, eps)
                                        - invariant_measure_tree(fam, cl, eps).nu).max()))
    metrics = {"tree_vs_direct": worst, "n_classes": len(d.classes)}
    checks = [Check("tree theorem matches direct solve", worst <= 1e-10, worst, "<= 1e-10")]
    return checks + _expect(cfg, metrics), metrics


def _reeb(cfg):
    from .field_dsl import matrix_field, vector_field
    from .graph_diffusion import GraphDiffusionSpec
    from .reeb import ScalarField2D, build_reeb_graph
    box = need(cfg, "box", list)
    f = ScalarField2D.from_source(need(cfg, "H", str), tuple(box), need(cfg, "nx", int, 512))
    g = build_reeb_graph(f, cap=need(cfg, "cap", NUM, None))
    a = need(cfg, "a", list, None)
    beta = need(cfg, "beta", list, None)
    a = matrix_field(a, ("x1", "x2")) if a is not None else None
    beta = vector_field(beta, ("x1", "x2")) if beta is not None else None
    return f, g, GraphDiffusionSpec.from_reeb(f, g, a, beta, n_levels=need(cfg, "n_levels", int, 40))


def _coef_csv(spec):
    rows = [(k, z, t, a, d) for k, c in sorted(spec.coefficients.items())
            for z, t, a, d in zip(c.z, c.T, c.abar, c.drift)]
    return _csv(["edge", "z", "T", "abar", "drift"], rows)


def run_reeb(cfg, seed, out, art):
    from .reeb import graph_json
    f, g, spec = _reeb(cfg)
    _write(out, "reeb.json", graph_json(g, spec.coefficients.values(), spec.gluing.values()), art)
    _write(out, "coefficients.csv", _coef_csv(spec), art)
    metrics, checks = {"n_vertices": len(g.vertices), "n_edges": len(g.edges)}, []
    for v in g.saddles():
        gl = spec.gluing[v.id]
        up = sum(gl.gamma[j] for j, s in gl.sign.items() if s > 0)
        down = sum(gl.gamma[j] for j, s in gl.sign.items() if s < 0)
        metrics[f"gluing_symmetry[{v.id}]"] = up / down - 1
    return checks + _expect(cfg, metrics), metrics


def run_graph_solve(cfg, seed, out, art):
    from .graph_diffusion import GraphBVP, solve_dirichlet
    b = need(cfg, "bvp", dict)
    cuts = {int(e): {side: tuple(v) for side, v in c.items()}
            for e, c in need(b, "cuts", dict, {}, where="bvp").items()}
    verts = {int(k): float(v) for k, v in need(b, "vertex_values", dict, {}, where="bvp").items()}
    if not cuts and not verts:
        raise ConfigError("bvp: at least one of 'bvp.cuts' or 'bvp.vertex_values' is required")
    n = need(b, "n", int, 400, where="bvp")
    f, g, spec = _reeb(cfg)
    bvp = GraphBVP(cuts=cuts, vertex_values=verts, n=n)
    sol = solve_dirichlet(spec, bvp)
    _write(out, "solution.csv", sol.to_csv(), art)
    lo, hi = sol.value_range()
    psi = bvp.psi_values()
    metrics = {"min": lo, "max": hi,
               "gluing_residual": max((abs(r[0]) for r in sol.residuals.values()), default=0.0)}
    for k, (e, h) in enumerate(need(cfg, "probes", list, [])):
        metrics[f"probe[{k}]"] = sol(int(e), float(h))
    checks = [Check("maximum principle", bool(min(psi) - 1e-10 <= lo and hi <= max(psi) + 1e-10),
                    [lo, hi], [min(psi), max(psi)])]
    return checks + _expect(cfg, metrics), metrics


def run_front(cfg, seed, out, art):
    from .fronts import ReactionSpec, equivalent_radius, front_field, grid_csv
    box = [tuple(b) for b in need(cfg, "box", list)]
    names = ("x", "y", "z")[:len(box)]
    hx = need(cfg, "hx", NUM)
    rate_src = need(cfg, "rate", (str, int, float))
    supp_src = need(cfg, "support", str)
    spec = ReactionSpec.on_box(
        box, hx,
        (lambda *m: _grid_eval(str(rate_src), names, m)),
        (lambda *m: _grid_eval(supp_src, names, m) <= 0.0),
        a=need(cfg, "a", NUM, 1.0))
    t, dt = need(cfg, "t", NUM), need(cfg, "dt", NUM)
    ff = front_field(spec, t, dt)
    _write(out, "v0.csv", grid_csv(spec, ff.v0[-1], "v0"), art)
    _write(out, "front.csv", grid_csv(spec, ff.front[-1].astype(float), "inside"), art)
    metrics = {"front_cells": int(ff.front[-1].sum())}
    if len(box) == 2:
        metrics["equivalent_radius"] = equivalent_radius(ff.front[-1], hx)
    return _expect(cfg, metrics), metrics


def run_phantom(cfg, seed, out, art):
    from .phantom import SlowFastSpec, analyze, simulate_verify
    spec = SlowFastSpec.from_sources(
        need(cfg, "f", str), need(cfg, "sigma", (str, int, float), 1.0),
        y_grid=np.linspace(*need(cfg, "y_grid", list)), x_range=tuple(need(cfg, "x_range", list, [-10, 10])),
        schedule=tuple(tuple(s) for s in need(cfg, "schedule", list, [])))
    res = analyze(spec)
    sim = need(cfg, "simulate", dict, None)
    if sim is not None:
        res.verification = simulate_verify(spec, spec.schedule, need(sim, "T", NUM, where="simulate"),
                                           need(sim, "n_paths", int, where="simulate"),
                                           RngStream(seed, "phantom:run"), need(sim, "x0", NUM, where="simulate"),
                                           need(sim, "y0", NUM, where="simulate"), y_star=res.y_star, lam=res.lam)
        _write(out, "masses.csv", res.masses_csv(), art)
    _write(out, "phantom.json", res.to_json(), art)
    metrics = {"y_star": res.y_star, "Lambda": res.lam, "P_minus": res.weights.p_minus,
               "P_plus": res.weights.p_plus}
    checks = []
    if res.verification:
        fin = res.verification[-1]
        metrics.update(mass_minus=fin.mass_minus, mass_plus=fin.mass_plus)
        checks += [abs_check("mass near Q- at finest point", fin.mass_minus, res.weights.p_minus, 0.05),
                   abs_check("mass near Q+ at finest point", fin.mass_plus, res.weights.p_plus, 0.05)]
    return checks + _expect(cfg, metrics), metrics


def run_verify(cfg, seed, out, art):
    if "fixture" in cfg:
        base = load_fixture(need(cfg, "fixture", str))
        cfg = {**base, **{k: v for k, v in cfg.items() if k != "fixture"}}
    name = need(cfg, "check", str)
    if name not in CHECKS:
        raise ConfigError(f"key 'check': unknown check {name!r} (have {sorted(CHECKS)})")
    sink = OutDir(out)
    checks, _ = run_check({**cfg, "params": need(cfg, "params", dict, {})}, seed, sink)
    art.extend(sorted(set(sink.written)))
    return checks, {}


PIPELINES = {
    "simulate": run_simulate, "exit": run_exit, "quasipotential": run_quasipotential,
    "hierarchy": run_hierarchy, "markov": run_markov, "reeb": run_reeb,
    "graph-solve": run_graph_solve, "front": run_front, "phantom": run_phantom,
    "verify": run_verify,
}


# ---------------------------------------------------------------------------
# reports

def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      default=lambda o: o.item() if hasattr(o, "item") else str(o))


def _sha(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _plain_metric(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def versions():
    import scipy
    return {"fwlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def threads(cli_value):
    env = os.environ.get("FWLAB_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"FWLAB_THREADS must be an integer, got {env!r}") from None
    return cli_value or 1


def run_config(cfg, out, seed=None, n_threads=1):
    """Validate and run one config dict; returns the report dict."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    kind = need(cfg, "kind", str)
    if kind not in KINDS:
        raise ConfigError(f"key 'kind': unknown kind {kind!r} (expected one of {', '.join(KINDS)})")
    if seed is None:
        seed = need(cfg, "seed", int)
    effective = {k: v for k, v in cfg.items() if k != "out"}
    effective["seed"] = seed
    os.makedirs(out, exist_ok=True)
    art = []
    t0 = time.perf_counter()
    checks, metrics = PIPELINES[kind](cfg, seed, out, art)
    wall = time.perf_counter() - t0
    budget = cfg.get("budget_s")
    hashes = {}
    for name in sorted(art):
        with open(os.path.join(out, name), "rb") as fh:
            hashes[name] = hashlib.sha256(fh.read()).hexdigest()
    body = {
        "kind": kind, "name": cfg.get("name", ""), "seed": seed,
        "config_hash": _sha(_canonical(effective)), "versions": versions(),
        "checks": [c.to_dict() for c in checks],
        "metrics": {k: _plain_metric(v) for k, v in sorted(metrics.items())},
        "artifacts": hashes,
        "passed": all(c.passed for c in checks),
    }
    body["report_hash"] = _sha(_canonical(body))
    # wall time and thread count are kept out of the hashed body
    body["runtime"] = {"wall_time_s": wall, "budget_s": budget, "threads": n_threads,
                       "within_budget": budget is None or wall <= budget}
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return body


def _ok(report):
    return report["passed"] and report["runtime"]["within_budget"]


def _print_table(rows, stream=sys.stdout):
    for fixture, c in rows:
        tag = "PASS" if c["passed"] else "FAIL"
        meas = c["measured"]
        if isinstance(meas, float):
            meas = f"{meas:.6g}"
        stream.write(f"{tag}  {fixture:24s} {c['name']}: measured {meas}, expected {c['expected']}"
                     + (f" ({c['tolerance']})" if c["tolerance"] else "") + "\n")


def cmd_run(args):
    with open(args.config, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
    out = args.out or cfg.get("out") or "fwlab-out"
    rep = run_config(cfg, out, args.seed, threads(args.threads))
    _print_table([(rep["name"] or rep["kind"], c) for c in rep["checks"]])
    rt = rep["runtime"]
    print(f"report {os.path.join(out, 'report.json')}  hash {rep['report_hash'][:16]}  "
          f"wall {rt['wall_time_s']:.1f}s")
    return 0 if _ok(rep) else 1


def cmd_verify(args):
    names = fixture_names()
    if args.filter:
        names = [args.filter] if args.filter in names else [n for n in names if args.filter in n]
        if not names:
            raise ConfigError(f"--filter {args.filter!r} matches no fixture (have {', '.join(fixture_names())})")
    out = args.out or "fwlab-verify"
    n_threads = threads(args.threads)
    reports, ok = {}, True
    for name in names:
        cfg = load_fixture(name)
        rep = run_config(cfg, os.path.join(out, name), args.seed, n_threads)
        reports[name] = rep
        _print_table([(name, c) for c in rep["checks"]])
        rt = rep["runtime"]
        if rt["budget_s"] is not None:
            tag = "PASS" if rt["within_budget"] else "FAIL"
            print(f"{tag}  {name:24s} runtime: {rt['wall_time_s']:.1f}s (budget {rt['budget_s']}s)")
        sys.stdout.flush()
        ok = ok and _ok(rep)
    agg = {"fixtures": {n: r["report_hash"] for n, r in reports.items()},
           "passed": all(r["passed"] for r in reports.values())}
    agg["report_hash"] = _sha(_canonical(agg))
    with open(os.path.join(out, "verify_report.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(agg, indent=2, sort_keys=True) + "\n")
    print(f"{'ALL PASS' if ok else 'FAILURES'}  {len(names)} fixture(s)  hash {agg['report_hash'][:16]}")
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="fwlab", description="Run fwlab experiments and acceptance checks.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    v = sub.add_parser("verify", help="run the bundled acceptance fixtures")
    v.add_argument("--filter")
    v.add_argument("--out")
    v.add_argument("--seed", type=int)
    v.add_argument("--threads", type=int)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return cmd_run(args) if args.command == "run" else cmd_verify(args)
    except ConfigError as exc:
        print(f"fwlab: config error: {exc}", file=sys.stderr)
        return 2
    except FieldError as exc:
        print(f"fwlab: config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"fwlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
