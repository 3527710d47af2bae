import numpy as np
import pytest

from fwlab.phantom import (PhantomError, ScheduleError, SlowFastSpec, admissibility, analyze,
                           branches, find_ystar, roots_at, simulate_verify, v_at, v_branches)
from fwlab.rng import RngStream

# roots -1, 0.5 + y, 2: equal areas when the middle root is the midpoint
LINEAR = "-(x+1)*(x-(0.5+y))*(x-2)"


def spec(f=LINEAR, sigma="1", **kw):
    kw.setdefault("y_grid", np.linspace(-0.3, 0.3, 7))
    kw.setdefault("x_range", (-5.0, 5.0))
    return SlowFastSpec.from_sources(f, sigma, **kw)


def barrier(a, b, m):
    p = -np.poly([-1.0, m, 2.0])
    P = np.polyint(p)
    return 2 * abs(np.polyval(P, b) - np.polyval(P, a))


def test_roots_and_barriers_closed_form():
    s = spec()
    xm, x0, xp = roots_at(s, 0.1)
    assert (xm, x0, xp) == pytest.approx((-1.0, 0.6, 2.0), abs=1e-9)
    vm, vp = v_at(s, 0.1)
    assert vm == pytest.approx(barrier(0.6, -1.0, 0.6), rel=1e-9)
    assert vp == pytest.approx(barrier(0.6, 2.0, 0.6), rel=1e-9)


def test_ystar_lambda_and_weights():
    r = analyze(spec())
    assert r.y_star == pytest.approx(0.0, abs=1e-7)
    assert r.lam == pytest.approx(barrier(0.5, 2.0, 0.5), rel=1e-7)
    assert r.weights.p_minus == pytest.approx(2 / 3, abs=1e-9)
    assert r.weights.p_plus == pytest.approx(1 / 3, abs=1e-9)
    # the time-averaged slow velocity vanishes
    assert r.weights.p_minus * r.weights.x_minus + r.weights.p_plus * r.weights.x_plus == \
        pytest.approx(0.0, abs=1e-9)
    assert "0/0" in r.weights.literal_flag


def test_noise_shape_moves_ystar():
    # more noise toward X_+ lowers V_+, so y* shifts to where V_+ is larger
    noisy = spec(sigma="1+0.1*x")
    y_star, _ = find_ystar(noisy, v_branches(noisy))
    assert y_star < -1e-3


def test_branch_errors():
    with pytest.raises(PhantomError):
        roots_at(spec("-(x+1)*(x^2+1)"), 0.0)
    with pytest.raises(PhantomError):
        roots_at(spec("(x+1)*(x-0.5)*(x-2)"), 0.0)
    with pytest.raises(PhantomError):
        roots_at(spec("-(x-0.2)*(x-0.5)*(x-2)"), 0.0)
    assert branches(spec()).max_jump() == pytest.approx(0.1, abs=1e-9)


def test_non_monotone_barriers_rejected():
    s = spec("-(x+1)*(x-(0.5+y^2))*(x-2)")
    with pytest.raises(PhantomError):
        find_ystar(s, v_branches(s))


def test_admissibility_rules():
    ok = admissibility(1e-4, 1e-3, 0.5, dt=1e-3 / 50)
    assert ok["drive"] == pytest.approx(0.1 * np.log(1e3))
    assert ok["ratio_small"] and ok["dt_ok"] and ok["drive_ok"] and ok["admissible"]
    weak = admissibility(1e-4, 1e-3, 1.0, dt=1e-3 / 50)
    assert not weak["drive_ok"] and not weak["admissible"]
    assert not admissibility(1e-4, 1e-3, 0.5, dt=1e-4)["admissible"]
    assert not admissibility(1e-3, 1e-3, 0.01)["ratio_small"]


def test_strict_schedule_and_reproducibility():
    s = spec()
    with pytest.raises(ScheduleError):
        simulate_verify(s, [(1e-4, 1e-3)], 0.01, 10, RngStream(1), 2.0, 0.0)
    run = lambda: simulate_verify(s, [(2e-3, 1e-2)], 0.05, 64, RngStream(2, "ph"), 2.0, 0.0, strict=False)
    a, b = run(), run()
    assert a == b
    assert not a[0].admissible
    assert 0.0 <= a[0].total <= 1.0
