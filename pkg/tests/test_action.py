import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fwlab.action import (PathDiscretization, Point, Polyline, action, action_and_gradient,
                          adaptive_simpson, minimize_action, quasipotential_1d,
                          quasipotential_boundary, v_matrix)
from fwlab.dynamics import DiffusionSpec, integrate_ode

DOUBLE_WELL = DiffusionSpec.from_sources(["-(x1^3-x1)"])


def test_free_motion_straight_line():
    spec = DiffusionSpec.from_sources(["0", "0"])
    x, y, T = np.array([0.0, 0.0]), np.array([1.0, 2.0]), 2.5
    S = action(spec, PathDiscretization.straight(x, y, T, N=50))
    assert S == pytest.approx(np.sum((y - x) ** 2) / (2 * T), rel=1e-12)


def test_flow_line_has_zero_action():
    spec = DiffusionSpec.from_sources(["x2", "-x1"])
    tr = integrate_ode(spec, [1.0, 0.0], 0.01, 2.0)
    assert action(spec, PathDiscretization(tr.states, 2.0)) < 1e-6


def test_uphill_reversed_flow_costs_twice_the_barrier():
    # phi' = +U'(phi) from near the well to near the saddle
    up = DiffusionSpec.from_sources(["x1^3-x1"])
    a, b = -1 + 1e-3, -1e-3
    t_end = 14.0
    tr = integrate_ode(up, [a], 1e-3, t_end)
    pts = tr.states
    U = lambda x: x ** 4 / 4 - x ** 2 / 2
    S = action(DOUBLE_WELL, PathDiscretization(pts, t_end))
    assert S == pytest.approx(2 * (U(pts[-1, 0]) - U(pts[0, 0])), rel=1e-3)
    assert pts[-1, 0] == pytest.approx(b, abs=0.05)


def test_coincident_endpoints_give_zero():
    r = minimize_action(DOUBLE_WELL, [-1.0], [-1.0])
    assert r.value == 0.0 and r.converged


def test_gradient_matches_finite_difference():
    spec = DiffusionSpec.from_sources(["-x1+x2^2", "-x2*x1"])
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((12, 2))
    S, g = action_and_gradient(spec, pts, 1.3)
    h = 1e-6
    for i in range(1, 11):
        for k in range(2):
            hi, lo = pts.copy(), pts.copy()
            hi[i, k] += h
            lo[i, k] -= h
            fd = (action_and_gradient(spec, hi, 1.3, need_grad=False)[0]
                  - action_and_gradient(spec, lo, 1.3, need_grad=False)[0]) / (2 * h)
            assert g[i, k] == pytest.approx(fd, rel=1e-5, abs=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.floats(0.1, 10))
def test_action_nonnegative(coords, T):
    spec = DiffusionSpec.from_sources(["-(x1^3-x1)+x2", "-x2*x1"])
    pts = np.asarray(coords).reshape(3, 2)
    assert action(spec, PathDiscretization(pts, T)) >= 0.0


def test_one_dimensional_closed_forms():
    one = lambda x: 1.0
    assert quasipotential_1d(lambda x: 0.0, one, 0.0, 1.0) == 0.0
    # constant pull c over length L
    assert quasipotential_1d(lambda x: 0.7, one, 0.0, 1.5) == pytest.approx(2 * 0.7 * 1.5, rel=1e-10)
    # from the saddle at 0 to the well at -1
    v = quasipotential_1d(lambda x: -(x ** 3 - x), one, 0.0, -1.0)
    assert v == pytest.approx(0.5, rel=1e-10)
    with pytest.raises(ValueError):
        quasipotential_1d(lambda x: 1.0, lambda x: x, -1.0, 1.0)


def test_adaptive_simpson_polynomial():
    assert adaptive_simpson(lambda x: x ** 3 - 2 * x, 0.0, 2.0) == pytest.approx(0.0, abs=1e-12)
    assert adaptive_simpson(math.exp, 0.0, 1.0) == pytest.approx(math.e - 1, rel=1e-10)


def test_double_well_barrier_by_minimization():
    r = minimize_action(DOUBLE_WELL, [-1.0], [0.0], N=100)
    assert r.value == pytest.approx(0.5, rel=0.03)


def test_tilted_double_well_asymmetry():
    roots = np.sort(np.roots([1, 0, -1, 0.2]).real)
    U = lambda x: x ** 4 / 4 - x ** 2 / 2 + 0.2 * x
    spec = DiffusionSpec.from_sources(["-(x1^3-x1+0.2)"])
    V, info = v_matrix(spec, [Point((roots[0],)), Point((roots[2],))], N=80, n_T=8)
    assert V[0, 1] == pytest.approx(2 * (U(roots[1]) - U(roots[0])), rel=0.03)
    assert V[1, 0] == pytest.approx(2 * (U(roots[1]) - U(roots[2])), rel=0.03)
    assert V[1, 0] < V[0, 1]
    assert info["symmetric_pairs"] == []


def test_radial_boundary_is_degenerate():
    spec = DiffusionSpec.from_sources(["-x1", "-x2"])
    th = np.linspace(0, 2 * np.pi, 33)[:-1]
    circle = Polyline(tuple(map(tuple, np.stack([np.cos(th), np.sin(th)], 1))))
    best, x_star = quasipotential_boundary(spec, [0.0, 0.0], circle, n_candidates=4, N=40, n_T=6)
    # |x|^2 on the inscribed polygon
    assert best.value == pytest.approx(1.0, rel=0.03)
    assert best.degenerate
    assert np.linalg.norm(x_star) == pytest.approx(1.0, rel=0.01)
