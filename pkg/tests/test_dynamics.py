import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fwlab.dynamics import (Ball, BlowUpError, DiffusionSpec, Interval, Polygon, TimeoutResult,
                            first_exit, first_exit_ensemble, gronwall_bound, integrate_ode,
                            integrate_sde, limit_cycle_average, occupation, sde_ensemble,
                            trajectory_csv)
from fwlab.rng import RngStream


def test_zero_drift_is_constant():
    spec = DiffusionSpec.from_sources(["0", "0"])
    tr = integrate_ode(spec, [1.0, 1.0], 0.1, 2.0)
    assert np.all(tr.states == 1.0)
    tr = integrate_sde(spec, [1.0, 1.0], 0.1, 2.0, RngStream(0))
    assert np.all(tr.states == 1.0)


def test_exponential_decay():
    spec = DiffusionSpec.from_sources(["-x1"])
    tr = integrate_ode(spec, [1.0], 0.01, 1.0)
    assert abs(tr.final[0] - math.exp(-1)) < 1e-6


def test_rotation_period():
    spec = DiffusionSpec.from_sources(["x2", "-x1"])
    tr = integrate_ode(spec, [1.0, 0.0], 2 * math.pi / 1000, 2 * math.pi)
    assert np.linalg.norm(tr.final - [1.0, 0.0]) < 1e-4


def test_ou_stationary_variance():
    spec = DiffusionSpec.from_sources(["-x1"], eps=0.5)
    X = sde_ensemble(spec, [0.0], 10_000, 0.01, 5.0, RngStream(11, "ou"))
    var = X[:, 0].var()
    se = 0.25 * math.sqrt(2 / 10_000)
    assert abs(var - 0.25) < 3 * se


def test_gronwall_example():
    spec = DiffusionSpec.from_sources(["-x1"], beta=["1"], eps=0.01)
    x = integrate_ode(spec, [0.5], 1e-3, 1.0).states[:, 0]
    y = integrate_ode(spec.with_eps(0.0), [0.5], 1e-3, 1.0).states[:, 0]
    assert np.max(np.abs(x - y)) <= gronwall_bound(0.01, 1.0, 1.0, 1.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.001, 0.2), st.floats(-2, 2), st.floats(-2, 2))
def test_gronwall_bound_holds(a, b, eps, x0, y0):
    # b(x) = M x with ||M|| <= K, |beta| <= sqrt(2)
    spec = DiffusionSpec.from_sources([f"{a}*x1+{b}*x2", f"{-b}*x1+{a}*x2"],
                                      beta=["sin(x2)", "cos(x1)"], eps=eps)
    K = math.hypot(a, b)
    x = integrate_ode(spec, [x0, y0], 2e-3, 1.0).states
    y = integrate_ode(spec.with_eps(0.0), [x0, y0], 2e-3, 1.0).states
    t = np.arange(len(x)) * 2e-3
    dev = np.maximum.accumulate(np.linalg.norm(x - y, axis=1))
    assert np.all(dev <= gronwall_bound(eps, math.sqrt(2), K, t) + 1e-12)


def test_exit_closed_form():
    spec = DiffusionSpec.from_sources(["x1"])
    tau, pt = first_exit(spec, [0.5], Interval(-1.0, 1.0), 1e-3, 10.0, RngStream(0))
    assert abs(tau - math.log(2)) < 1e-3
    assert abs(pt[0] - 1.0) < 1e-3


def test_exit_outside_start():
    spec = DiffusionSpec.from_sources(["x1"])
    tau, pt = first_exit(spec, [2.0], Interval(-1.0, 1.0), 1e-3, 10.0, RngStream(0))
    assert tau == 0.0 and pt[0] == 2.0


def test_exit_timeout():
    spec = DiffusionSpec.from_sources(["-x1"])
    res = first_exit(spec, [0.0], Interval(-1.0, 1.0), 1e-2, 1.0, RngStream(0))
    assert isinstance(res, TimeoutResult)


def test_polygon_and_ball_domains():
    spec = DiffusionSpec.from_sources(["1", "0"])
    sq = Polygon(((-1, -1), (1, -1), (1, 1), (-1, 1)))
    tau, pt = first_exit(spec, [0.0, 0.0], sq, 1e-3, 5.0, RngStream(0))
    assert abs(tau - 1.0) < 2e-3 and abs(pt[0] - 1.0) < 2e-3
    tau, pt = first_exit(spec, [0.0, 0.0], Ball((0.0, 0.0), 2.0), 1e-3, 5.0, RngStream(0))
    assert abs(tau - 2.0) < 2e-3


def test_monte_carlo_determinism():
    spec = DiffusionSpec.from_sources(["-(x1^3-x1)"], eps=0.3)
    a = first_exit_ensemble(spec, [-1.0], Interval(-2, 0), 0.01, 20.0, RngStream(5, "x"), n_paths=64)
    b = first_exit_ensemble(spec, [-1.0], Interval(-2, 0), 0.01, 20.0, RngStream(5, "x"), n_paths=64)
    c = first_exit_ensemble(spec, [-1.0], Interval(-2, 0), 0.01, 20.0, RngStream(6, "x"), n_paths=64)
    assert a.tau.tobytes() == b.tau.tobytes()
    assert a.tau.tobytes() != c.tau.tobytes()


def test_blowup_detected():
    spec = DiffusionSpec.from_sources(["x1^2"])
    with pytest.raises(BlowUpError):
        integrate_ode(spec, [1.0], 0.01, 5.0)


def test_occupation_constant_and_rotation():
    spec = DiffusionSpec.from_sources(["0", "0"])
    tr = integrate_ode(spec, [0.3, 0.3], 0.1, 1.0)
    occ = occupation(tr, [lambda s: ((s[:, 0] > 0.25) & (s[:, 0] < 0.35)).astype(float)],
                     box=([0, 0], [1, 1]), bins=10)
    assert occ.averages[0] == 1.0
    assert occ.mass.max() == 1.0 and occ.outside_mass == 0.0
    rot = DiffusionSpec.from_sources(["x2", "-x1"])
    tr = integrate_ode(rot, [1.0, 0.0], 0.01, 200.0)
    occ = occupation(tr, [lambda s: s[:, 0]])
    assert abs(occ.averages[0]) < 0.01


def test_limit_cycle_average():
    th = np.linspace(0, 2 * np.pi, 2001)[:-1]
    circle = np.stack([np.cos(th), np.sin(th)], 1)
    rot = lambda p: np.stack([p[:, 1], -p[:, 0]], 1)
    assert limit_cycle_average(lambda p: np.full(len(p), 3.0), circle, rot) == pytest.approx(3.0)
    assert limit_cycle_average(lambda p: p[:, 0] ** 2, circle, rot) == pytest.approx(0.5, abs=1e-5)
    # ellipse x1^2 + 4 x2^2 = 1 under b = (4 x2, -x1): nonconstant speed
    spec = DiffusionSpec.from_sources(["4*x2", "-x1"])
    ell = np.stack([np.cos(th), 0.5 * np.sin(th)], 1)
    b = lambda p: spec.drift(p)
    cyc = limit_cycle_average(lambda p: p[:, 0] ** 4, ell, b)
    tr = integrate_ode(spec, [1.0, 0.0], np.pi / 4000, np.pi)
    ta = occupation(tr, [lambda s: s[:, 0] ** 4]).averages[0]
    assert cyc == pytest.approx(ta, rel=0.01)
    assert cyc == pytest.approx(3 / 8, rel=1e-3)


def test_trajectory_csv_format():
    spec = DiffusionSpec.from_sources(["-x1"])
    text = trajectory_csv(integrate_ode(spec, [1.0], 0.5, 1.0))
    lines = text.split("\r\n")
    assert lines[0].startswith("t,")
    assert len(lines) == 5 and lines[-1] == ""
