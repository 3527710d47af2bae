import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fwlab.field_dsl import (BinOp, Call, DomainError, Neg, Num, ParseError, UnboundVariableError, Var,
                             diff, evaluate, grad, matrix_field, parse, scalar_field, simplify,
                             to_source, vector_field)


def ev(src, **kw):
    return evaluate(parse(src), kw)


def test_basic_values():
    assert ev("x1^2 + x2^2", x1=1, x2=2) == 5
    assert ev("sin(0)") == 0
    assert ev("x1*x2", x1=3, x2=4) == 12
    assert ev("exp(0)") == 1


def test_precedence():
    assert ev("-x^2", x=3) == -9
    assert ev("2^3^2") == 512
    assert ev("1-2-3") == -4
    assert ev("8/4/2") == 1


def test_unbalanced_paren_column():
    with pytest.raises(ParseError) as exc:
        parse("(x1")
    assert exc.value.column == 4


def test_division_by_zero():
    with pytest.raises(DomainError):
        ev("x1/x2", x1=1, x2=0)


def test_unbound_variable():
    with pytest.raises(UnboundVariableError):
        ev("x1+x2", x1=1)


def test_symbolic_derivatives():
    assert to_source(diff(parse("x1*x2"), "x1")) == "x2"
    assert evaluate(diff(parse("x1^2+x2^2"), "x1"), {"x1": 1, "x2": 2}) == 2
    d = evaluate(diff(parse("sin(x1)"), "x1"), {"x1": 0.0})
    h = 1e-6
    fd = (math.sin(h) - math.sin(-h)) / (2 * h)
    assert d == 1 and abs(d - fd) < 1e-8


def test_field_shapes():
    b = vector_field(["-x1", "x1*x2"], ("x1", "x2"))
    out = b(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert out.shape == (2, 2)
    assert np.allclose(out, [[-1, 2], [-3, 12]])
    m = matrix_field([["1", "0"], ["x1", "1"]], ("x1", "x2"))
    assert m(np.array([2.0, 0.0])).shape == (2, 2)
    H = scalar_field("x1^2+x2", ("x1", "x2"))
    assert np.allclose(H.scalar(np.array([[1.0, 1.0], [2.0, 0.0]])), [2, 4])


def test_vectorised_domain_error():
    f = scalar_field("log(x)", ("x",))
    with pytest.raises(DomainError):
        f(np.array([1.0, -1.0]))


# --- property tests -------------------------------------------------------

VARS = ("x1", "x2")
leaves = st.one_of(st.builds(Num, st.integers(-5, 5).map(float)), st.sampled_from([Var(v) for v in VARS]))


def _tree(children):
    return st.one_of(
        st.builds(BinOp, st.sampled_from(["+", "-", "*"]), children, children),
        st.builds(Neg, children),
        st.builds(lambda a: Call("sin", (a,)), children),
        st.builds(lambda a: Call("cos", (a,)), children),
        st.builds(lambda a: BinOp("^", a, Num(2.0)), children),
    )


exprs = st.recursive(leaves, _tree, max_leaves=12)
points = st.tuples(st.floats(-2, 2), st.floats(-2, 2))


@settings(max_examples=200, deadline=None)
@given(exprs, points)
def test_round_trip_preserves_value(e, p):
    b = dict(zip(VARS, p))
    v1 = evaluate(e, b)
    e2 = parse(to_source(e))
    v2 = evaluate(e2, b)
    assert v2 == pytest.approx(v1, rel=1e-12, abs=1e-12)
    assert evaluate(simplify(e), b) == pytest.approx(v1, rel=1e-9, abs=1e-9)


@settings(max_examples=150, deadline=None)
@given(exprs, points)
def test_gradient_matches_finite_difference(e, p):
    g = grad(e, VARS)
    h = 1e-6
    for k, v in enumerate(VARS):
        hi = dict(zip(VARS, p))
        lo = dict(zip(VARS, p))
        hi[v] += h
        lo[v] -= h
        fd = (evaluate(e, hi) - evaluate(e, lo)) / (2 * h)
        exact = evaluate(g[k], dict(zip(VARS, p)))
        assert exact == pytest.approx(fd, rel=1e-5, abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(exprs, st.lists(points, min_size=1, max_size=5))
def test_compiled_matches_interpreter(e, pts):
    f = scalar_field(to_source(e), VARS)
    arr = np.asarray(pts, float)
    got = f.scalar(arr)
    want = [evaluate(e, dict(zip(VARS, q))) for q in pts]
    assert np.allclose(got, want, rtol=1e-12, atol=1e-12)
