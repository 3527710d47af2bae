import math

import numpy as np
import pytest

from fwlab.field_dsl import vector_field
from fwlab.reeb import (EdgeCoefficients, ReebError, ScalarField2D, basin_labels, build_reeb_graph,
                        divergence_of_flux, edge_coefficients, extract_contour, gluing_coefficients,
                        graph_json, load_graph_json, project_Y)

TWO_WELL = "x2^2/2+x1^4/4-x1^2/2"


@pytest.fixture(scope="module")
def two_well():
    f = ScalarField2D.from_source(TWO_WELL, (-2.5, 2.5, -2.5, 2.5), 256)
    return f, build_reeb_graph(f, cap=1.5)


def test_oscillator_graph_and_coefficients():
    f = ScalarField2D.from_source("(x1^2+x2^2)/2", (-3, 3, -3, 3), 256)
    g = build_reeb_graph(f)
    assert len(g.vertices) == 1 and len(g.edges) == 1 and g.edges[0].unbounded
    z = np.array([0.2, 1.0, 2.0])
    c = edge_coefficients(f, g, 0, None, vector_field(["-x1", "-x2"], ("x1", "x2")), z_grid=z)
    assert np.allclose(c.T, 2 * np.pi, rtol=5e-3)
    assert np.allclose(c.abar, 2 * z, rtol=1e-2)
    assert np.allclose(c.betabar, -2 * z, rtol=1e-2)


def test_two_well_structure(two_well):
    f, g = two_well
    assert g.check_degrees() and g.is_tree()
    mins = sorted(g.minima(), key=lambda v: v.position[0])
    assert [round(v.position[0], 6) for v in mins] == [-1.0, 1.0]
    assert all(v.value == pytest.approx(-0.25, abs=1e-10) for v in mins)
    (s,) = g.saddles()
    assert s.value == pytest.approx(0.0, abs=1e-10)
    assert np.allclose(s.position, 0.0, atol=1e-8)
    up = g.unbounded_edge()
    assert up.lo == s.id and set(up.minima) == {m.id for m in mins}


def test_gluing_is_symmetric_and_additive(two_well):
    f, g = two_well
    (s,) = g.saddles()
    glue = gluing_coefficients(f, g, s.id)
    up = g.unbounded_edge().id
    lower = [e for e in glue.gamma if e != up]
    a, b = (glue.gamma[e] for e in lower)
    assert a == pytest.approx(b, rel=0.02)
    # the upper contour is the union of the two lower ones at the saddle
    assert glue.gamma[up] == pytest.approx(a + b, rel=0.05)
    assert glue.sign[up] == 1 and all(glue.sign[e] == -1 for e in lower)


def test_projection_picks_the_right_well(two_well):
    f, g = two_well
    h, e = project_Y(f, g, [[-1.0, 0.1], [1.0, -0.1], [0.0, 1.2]])
    left = g.edge_for(min(g.minima(), key=lambda v: v.position[0]).id, -0.2)
    right = g.edge_for(max(g.minima(), key=lambda v: v.position[0]).id, -0.2)
    assert e.tolist() == [left, right, g.unbounded_edge().id]
    assert h[2] == pytest.approx(0.72)
    assert basin_labels(f, g).shape == f.values.shape


def test_contour_lies_on_the_level(two_well):
    f, g = two_well
    up = g.unbounded_edge()
    poly = extract_contour(f, 0.5, up, g)
    assert np.allclose(f(poly), 0.5, atol=1e-8)
    with pytest.raises(ReebError):
        extract_contour(f, 0.0, up, g)


def test_laplacian_symbolic():
    H = ScalarField2D.from_source("x1^2+3*x2^2", (-1, 1, -1, 1), 16).H
    d = divergence_of_flux(H, None)
    assert np.allclose(d.scalar(np.array([[0.3, -0.7], [1.0, 2.0]])), 8.0)


def test_local_maximum_is_rejected():
    f = ScalarField2D.from_source("-(x1^2+x2^2)+0.1*(x1^2+x2^2)^2", (-2, 2, -2, 2), 128)
    with pytest.raises(ReebError):
        build_reeb_graph(f)


def test_json_round_trip(two_well):
    f, g = two_well
    c = EdgeCoefficients.hand_built(0, np.linspace(-0.2, -0.01, 5), 1.5, -0.5)
    g2, cs, _ = load_graph_json(graph_json(g, [c]))
    assert g2.to_dict() == g.to_dict()
    assert np.allclose(cs[0].abar, 1.5) and np.allclose(cs[0].drift, -0.5)
    assert math.isinf(g2.unbounded_edge().z_hi)
