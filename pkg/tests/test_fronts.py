import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fwlab.fronts import (ReactionSpec, StabilityError, WindowError, equivalent_radius, front_field,
                          front_positions_csv, front_time, huygens_constant, interface_position,
                          pde_solve_1d, v0_dp, v1_front)


def segment(c=1.0, hx=0.01, half=1.0, box=(-4.0, 4.0), a=1.0):
    return ReactionSpec.on_box([box], hx, c, lambda x: np.abs(x) <= half, a=a)


def test_v0_closed_form_constant_rate():
    s = segment()
    t = 1.0
    V = v0_dp(s, t, 0.05)
    x = s.axes[0]
    # distance to the grid support, which may miss |x| = 1 by rounding
    d = np.min(np.abs(x[:, None] - x[s.support][None, :]), axis=1)
    want = t - d ** 2 / (2 * t)
    near = d < 2.0
    assert np.max(np.abs(V[near] - want[near])) < 5e-3


def test_front_matches_huygens_for_constant_rate():
    s = segment(c=0.5, a=2.0)
    t = 1.2
    fr = v1_front(s, t, 0.1)
    hy = huygens_constant(s, t)
    assert abs(equivalent_radius(fr, s.hx) - equivalent_radius(hy, s.hx)) <= 2 * s.hx
    assert equivalent_radius(hy, s.hx) == pytest.approx(1 + t * math.sqrt(2 * 0.5 * 2.0), abs=s.hx)


def test_front_time_constant_rate():
    s = segment()
    i = int(np.argmin(np.abs(s.axes[0] - 2.5)))
    t_star = front_time(s, i, 3.0, 0.05)
    assert t_star == pytest.approx(1.5 / math.sqrt(2), rel=0.02)
    assert front_time(s, int(np.argmin(np.abs(s.axes[0]))), 1.0, 0.05) == 0.0


def rate_profiles():
    return st.lists(st.floats(0.2, 2.0), min_size=4, max_size=4)


@settings(max_examples=15, deadline=None)
@given(rate_profiles())
def test_front_grows_and_stays_inside_v0(levels):
    x = np.arange(-3.0, 3.0 + 0.025, 0.05)
    rate = np.interp(x, np.linspace(-3, 3, len(levels)), levels)
    s = ReactionSpec((x,), rate, np.abs(x) <= 0.5)
    ff = front_field(s, 1.0, 0.05)
    for a, b in zip(ff.front, ff.front[1:]):
        assert not np.any(a & ~b)
    for v0, fr in zip(ff.v0, ff.front):
        assert not np.any(fr & (v0 < -1e-9))


def test_slow_region_delays_the_front():
    # a strip of small c to the right of the support
    x = np.arange(-3.0, 3.0 + 0.005, 0.01)
    fast = ReactionSpec((x,), 1.0, np.abs(x) <= 0.5)
    slow = ReactionSpec((x,), np.where((x > 0.6) & (x < 1.2), 0.1, 1.0), np.abs(x) <= 0.5)
    a = v1_front(fast, 1.0, 0.05)
    b = v1_front(slow, 1.0, 0.05)
    assert b.sum() < a.sum()
    assert not np.any(b & ~a)


def test_validation_errors():
    x = np.linspace(-1, 1, 21)
    with pytest.raises(ValueError):
        ReactionSpec((x,), 1.0, np.zeros_like(x, bool))
    with pytest.raises(ValueError):
        ReactionSpec((x,), -1.0, np.abs(x) < 0.5)
    s = ReactionSpec((x,), 1.0, np.abs(x) < 0.5)
    with pytest.raises(ValueError):
        front_field(s, 1.0, 0.3)
    with pytest.raises(WindowError):
        front_field(s, 1.0, 0.5, window=1)
    with pytest.raises(StabilityError):
        pde_solve_1d(s, 1e-4, 0.1)
    with pytest.raises(StabilityError):
        pde_solve_1d(s, 0.01, 0.1, dt=1.0)


def test_fkpp_conditions():
    s = segment()
    assert s.check_fkpp() == []
    ok = ReactionSpec(s.axes, 1.0, s.support, nonlinearity=lambda x, u: 1.0 - u ** 2 + 0 * x)
    assert ok.check_fkpp() == []
    bad = ReactionSpec(s.axes, 1.0, s.support, nonlinearity=lambda x, u: (1.0 - u) * (1 + 2 * u) + 0 * x)
    assert {kind for kind, _ in bad.check_fkpp()} == {"exceeds c(x,0)"}


def test_pde_stays_in_range_and_advances():
    s = ReactionSpec.on_box([(-1.0, 4.0)], 0.01, 1.0, lambda x: x <= 0.0, a=1.0)
    r = pde_solve_1d(s, 0.01, 1.0, record_times=[0.5])
    assert r.u.min() >= 0.0 and r.u.max() <= 1 + 1e-6
    p = [interface_position(r.x, u) for u in r.u]
    assert p[0] == pytest.approx(0.0, abs=0.01)
    assert p[0] < p[1] < p[2]


def test_interface_position_interpolates():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    assert interface_position(x, np.array([1.0, 1.0, 0.0, 0.0])) == pytest.approx(1.5)
    assert math.isnan(interface_position(x, np.zeros(4)))
    assert front_positions_csv([0.0], [1.5]).split("\r\n")[:2] == ["t,position", "0.0,1.5"]
