import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from fwlab.cycles import (NonGenericError, ThresholdError, TransitionExponents, build_hierarchy,
                          generator_exp, metastable_profile, n_map, oracle_distribution,
                          predict_linear_cauchy, predict_nonlinear_cauchy, random_generic_v,
                          rate_matrix, resting_state)

TWO = np.array([[0.0, 1.0], [2.0, 0.0]])
# 0 -> 1 cheaply, 1 <-> 2 form a deeper pair, 2 is the deepest
THREE = np.array([[0.0, 0.5, 1.5],
                  [2.0, 0.0, 1.0],
                  [3.0, 2.5, 0.0]])


def test_exponent_validation():
    with pytest.raises(ValueError):
        TransitionExponents(np.array([[0.0, -1.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        TransitionExponents(np.ones((2, 3)))


def test_successor_map_and_ties():
    assert n_map(THREE) == {0: 1, 1: 2, 2: 1}
    with pytest.raises(NonGenericError):
        n_map(np.array([[0, 1, 1], [1, 0, 2], [1, 2, 0.0]]))
    assert not TransitionExponents(np.array([[0, 1, 1], [1, 0, 2], [1, 2, 0.0]])).generic


def test_two_state_profiles():
    assert metastable_profile(TWO, 0).to_dict() == {"initial": 0, "thresholds": [1.0], "states": [0, 1]}
    assert metastable_profile(TWO, 1).states == [1]


def test_three_state_hierarchy():
    h = build_hierarchy(THREE)
    assert h.nodes[h.root].states == (0, 1, 2)
    # {1, 2} is a rank-1 cycle whose main state is 2
    pair = h.nodes[h.chain(1)[1]]
    assert pair.states == (1, 2) and pair.main == 2
    p = metastable_profile(h, 0)
    assert p.states == [0, 1, 2] and p.thresholds == [0.5, 1.0]
    assert resting_state(h, 0, 0.7) == 1
    assert resting_state(h, 0, 5.0) == 2


def test_generator_exp_matches_scipy():
    rng = np.random.default_rng(3)
    Q = rng.uniform(0, 2, (5, 5))
    np.fill_diagonal(Q, 0)
    np.fill_diagonal(Q, -Q.sum(1))
    for t in (0.01, 1.0, 20.0):
        assert np.allclose(generator_exp(Q, np.log(t)), scipy.linalg.expm(Q * t), atol=1e-12)


def test_oracle_small_rates_stay_stochastic():
    row = oracle_distribution(TWO, 0, 1.5, 0.01)
    assert np.all(row >= 0) and row.sum() == pytest.approx(1.0, abs=1e-12)
    assert row[1] > 0.99
    with pytest.raises(ValueError):
        oracle_distribution(TWO, 0, 1.5, 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2 ** 32 - 1))
def test_profile_is_consistent_with_resting_state(ell, seed):
    rng = np.random.default_rng(seed)
    V = random_generic_v(ell, rng)
    h = build_hierarchy(V)
    for i in range(ell):
        p = metastable_profile(h, i)
        assert p.states[0] == i
        assert list(p.thresholds) == sorted(p.thresholds)
        assert all(a != b for a, b in zip(p.states, p.states[1:]))
        for lam in rng.uniform(0, max(p.thresholds, default=1.0) + 1, 5):
            if p.distance_to_threshold(lam) > 1e-6:
                assert p.state_at(lam) == resting_state(h, i, lam)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2 ** 32 - 1), st.floats(-6, 3))
def test_generator_exp_rows_are_probabilities(ell, seed, log_t):
    rng = np.random.default_rng(seed)
    V = random_generic_v(ell, rng)
    M = generator_exp(rate_matrix(V, 0.2), log_t)
    assert np.all(M >= 0)
    assert np.allclose(M.sum(1), 1.0, atol=1e-12)


def test_linear_cauchy_table():
    assert predict_linear_cauchy(1.0, 2.0, 1, 0.5, "g1", "g2") == "g1"
    assert predict_linear_cauchy(1.0, 2.0, 1, 1.5, "g1", "g2") == "g2"
    assert predict_linear_cauchy(1.0, 2.0, 2, 5.0, "g1", "g2") == "g2"
    assert predict_linear_cauchy(2.0, 1.0, 2, 1.5, "g1", "g2") == "g1"
    with pytest.raises(ThresholdError):
        predict_linear_cauchy(1.0, 2.0, 1, 1.0, 0, 1)
    with pytest.raises(ValueError):
        predict_linear_cauchy(1.0, 2.0, 3, 1.0, 0, 1)


def test_nonlinear_cauchy_linear_curves():
    z = np.linspace(0, 2, 41)
    V12, V21 = 2 - z, z
    above = predict_nonlinear_cauchy(z, V12, V21, 1, 1.5, 0.0, 2.0)
    assert above.z_bar == pytest.approx(1.0, abs=1e-12)
    assert above.lam_bar == pytest.approx(1.0, abs=1e-12)
    assert above.limit == pytest.approx(1.0) and above.weights == pytest.approx((0.5, 0.5))
    assert predict_nonlinear_cauchy(z, V12, V21, 1, 0.5, 0.0, 2.0).limit == pytest.approx(1.5)
    assert predict_nonlinear_cauchy(z, V12, V21, 2, 0.5, 0.0, 2.0).limit == pytest.approx(0.5)
    with pytest.raises(ThresholdError):
        predict_nonlinear_cauchy(z, V12, V21, 1, 1.0, 0.0, 2.0)
    with pytest.raises(ValueError):
        predict_nonlinear_cauchy(z, V21, V12, 1, 0.5, 0.0, 2.0)
