import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fwlab.graph_diffusion import (ChannelSpec, GraphBVP, GraphState, SingularSystemError,
                                   hitting_probabilities, simulate, solve_dirichlet,
                                   solve_neumann_channel, transition_law, y_graph)
from fwlab.reeb import Edge, ReebGraph, Vertex
from fwlab.rng import RngStream


def test_linear_profile_on_each_edge():
    # drift-free: linear on every edge, vertex value c from c = 2 (1 - c)
    spec = y_graph()
    sol = solve_dirichlet(spec, GraphBVP(vertex_values={0: 0.0, 2: 1.0, 3: 1.0}, n=50))
    for h in (-0.75, -0.2):
        assert sol(0, h) == pytest.approx(2 / 3 * (1 + h), abs=1e-10)
    for e in (1, 2):
        assert sol(e, 0.5) == pytest.approx(2 / 3 + 0.5 / 3, abs=1e-10)


def test_symmetric_y_splits_evenly():
    sol = solve_dirichlet(y_graph(), GraphBVP(vertex_values={2: 1.0, 3: 0.0}, n=50))
    assert sol(0, -0.5) == pytest.approx(0.5, abs=1e-10)
    assert sol(1, 0.4) == pytest.approx(0.7, abs=1e-10)
    assert sol(2, 0.4) == pytest.approx(0.3, abs=1e-10)


def test_gluing_weights_shift_the_vertex_value():
    # flux balance gamma_1 (1 - c) = gamma_2 c
    sol = solve_dirichlet(y_graph(gamma=(1.0, 1.0, 3.0)), GraphBVP(vertex_values={2: 1.0, 3: 0.0}, n=50))
    assert sol(0, -0.3) == pytest.approx(0.25, abs=1e-10)


def test_drift_on_one_branch():
    # betabar = 1/2 on edge 2 only; scale function there is (1 - exp(-h)), so
    # the vertex value is (1 - 1/e) / (2 - 1/e)
    spec = y_graph(betabar=(0.0, 0.0, 0.5))
    sol = solve_dirichlet(spec, GraphBVP(vertex_values={2: 1.0, 3: 0.0}, n=400))
    want = (1 - math.exp(-1)) / (2 - math.exp(-1))
    assert sol(0, -0.5) == pytest.approx(want, abs=1e-5)
    total, scale = sol.residuals[1]
    assert abs(total) <= 1e-8 * max(scale, 1.0)


def test_cut_levels_and_hitting_probabilities():
    spec = y_graph()
    p = hitting_probabilities(spec, GraphState(0, -0.5), [2, (0, "lo", -0.9)], n=100)
    assert p.sum() == pytest.approx(1.0, abs=1e-10)
    # edge 2 reflects at its end, so the vertex value c solves c / 0.9 = 1 - c
    assert p[0] == pytest.approx(0.4 / 1.9, abs=1e-8)


def test_missing_boundary_data():
    with pytest.raises(ValueError):
        solve_dirichlet(y_graph(), GraphBVP())
    with pytest.raises(SingularSystemError):
        solve_dirichlet(y_graph(), GraphBVP(vertex_values={2: 1.0}, exclude=frozenset({1}), n=20))


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2),
       st.tuples(st.floats(0.2, 3), st.floats(0.2, 3), st.floats(0.2, 3)),
       st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)))
def test_maximum_principle(p0, p2, p3, gamma, drift):
    spec = y_graph(abar=1.0, betabar=drift, gamma=gamma)
    sol = solve_dirichlet(spec, GraphBVP(vertex_values={0: p0, 2: p2, 3: p3}, n=60))
    lo, hi = sol.value_range()
    slack = 1e-9 * max(1.0, abs(p0), abs(p2), abs(p3))
    assert min(p0, p2, p3) - slack <= lo and hi <= max(p0, p2, p3) + slack


def test_stationary_law_follows_gluing_weights():
    spec = y_graph(gamma=(1.0, 2.0, 3.0))
    law = transition_law(spec, GraphState(0, -0.5), 30.0, n=60)
    m = law.edge_masses()
    assert [m[e] for e in (0, 1, 2)] == pytest.approx([1 / 6, 2 / 6, 3 / 6], abs=2e-3)
    levels, weights = law.marginal()
    assert weights.sum() == pytest.approx(1.0)
    assert len(levels) == len(weights)


def test_monte_carlo_matches_solver():
    spec = y_graph(betabar=(0.0, 0.0, 0.5))
    want = hitting_probabilities(spec, GraphState(0, -0.5), [(1, "hi", 0.8), (2, "hi", 0.8)], n=200)
    res = simulate(spec, GraphState(0, -0.5), 1e-3, 40.0, 0.1, RngStream(3, "graph:mc"), n_paths=2000,
                   absorbing=[(1, 0.8), (2, 0.8)])
    assert np.all(res.exit_side >= 0)
    got = np.mean(res.exit_side == 0)
    assert got == pytest.approx(want[0], abs=0.04)


def test_simulation_is_reproducible():
    spec = y_graph()
    a = simulate(spec, GraphState(1, 0.3), 1e-3, 1.0, 0.1, RngStream(4, "g"), n_paths=100)
    b = simulate(spec, GraphState(1, 0.3), 1e-3, 1.0, 0.1, RngStream(4, "g"), n_paths=100)
    assert a.h.tobytes() == b.h.tobytes() and a.edge.tobytes() == b.edge.tobytes()
    with pytest.raises(ValueError):
        simulate(spec, GraphState(1, 0.3), 1e-2, 1.0, 0.01, RngStream(4, "g"))


def test_neumann_channel_cosine():
    # (u')' = cos x on [0, pi] with zero flux and zero mean: u = -cos x
    graph = ReebGraph([Vertex(0, "minimum", (0.0, 0.0), 0.0), Vertex(1, "end", (1.0, 0.0), math.pi)],
                      [Edge(0, 0, 1, 0.0, math.pi, (0,))])
    ch = ChannelSpec(graph, {0: lambda x: np.ones_like(x)})
    sol = solve_neumann_channel(ch, {0: lambda x: 0.5 * np.cos(x)}, n=800)
    assert np.max(np.abs(sol.v[0] + np.cos(sol.h[0]))) < 1e-4
    with pytest.raises(ValueError):
        solve_neumann_channel(ch, {0: lambda x: np.ones_like(x)}, n=100)


def test_solution_csv():
    sol = solve_dirichlet(y_graph(n=5), GraphBVP(vertex_values={2: 1.0, 3: 0.0}, n=4))
    lines = sol.to_csv().split("\r\n")
    assert lines[0] == "edge,h,v" and len(lines) == 1 + 3 * 5 + 1
