import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fwlab.markov import (RateFamily, aggregate, arrows, chain_oracle, decompose,
                          eleven_state_family, invariant_measure_direct, invariant_measure_tree,
                          predict_state, random_rate_family, rank_recursion)


def test_rate_family_validation():
    with pytest.raises(ValueError):
        RateFamily(np.zeros((2, 2)) + np.eye(2), np.ones((2, 2)))
    with pytest.raises(ValueError):
        RateFamily(np.ones((2, 2)), -np.ones((2, 2)))


def test_two_state_measure_closed_form():
    k = np.array([[0.0, 1.0], [2.0, 0.0]])
    c = np.array([[0.0, 3.0], [0.5, 0.0]])
    rf = RateFamily(c, k)
    eps = 0.3
    q01, q10 = 3 * np.exp(-1 / eps), 0.5 * np.exp(-2 / eps)
    want = np.array([q10, q01]) / (q01 + q10)
    assert np.allclose(invariant_measure_direct(rf, [0, 1], eps), want, rtol=1e-12)
    tr = invariant_measure_tree(rf, [0, 1], eps)
    assert np.allclose(tr.nu, want, rtol=1e-12)
    assert tr.exponents.tolist() == [1.0, 0.0]
    assert tr.limit.tolist() == [0.0, 1.0]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2 ** 32 - 1), st.floats(0.05, 2.0))
def test_tree_formula_matches_linear_solve(n, seed, eps):
    rf = random_rate_family(n, np.random.default_rng(seed))
    states = list(range(n))
    a = invariant_measure_direct(rf, states, eps)
    b = invariant_measure_tree(rf, states, eps).nu
    assert np.max(np.abs(a - b)) <= 1e-10
    assert np.allclose(a @ rf.generator(eps), 0.0, atol=1e-12 * np.abs(rf.generator(eps)).max())


def test_tiny_rates_use_stable_elimination():
    k = np.array([[0, 30.0, 40.0], [1.0, 0, 35.0], [2.0, 50.0, 0]])
    rf = RateFamily.from_exponents(k)
    a = invariant_measure_direct(rf, [0, 1, 2], 0.5)
    b = invariant_measure_tree(rf, [0, 1, 2], 0.5).nu
    assert np.all(a >= 0)
    assert np.allclose(a, b, rtol=1e-6, atol=0)


def test_eleven_state_classes():
    rf = eleven_state_family()
    d = decompose(arrows(rf))
    one_based = [tuple(s + 1 for s in cl) for cl in d.classes]
    assert one_based == [(1, 2, 3), (4, 5), (6, 7, 8, 9)]
    trans = {s + 1: tuple(one_based[c] for c in v) for s, v in d.transient.items()}
    assert trans == {10: ((4, 5), (6, 7, 8, 9)), 11: ((6, 7, 8, 9),)}
    assert d.class_of(8) == 2 and d.class_of(9) is None


def test_arrows_mark_every_minimum():
    k = np.array([[0, 1.0, 1.0], [2.0, 0, 1.0], [1.0, 3.0, 0]])
    A = arrows(RateFamily.from_exponents(k))
    assert A.tolist() == [[False, True, True], [False, False, True], [True, False, False]]


def test_aggregation_of_two_pairs():
    # pairs {0,1} and {2,3}; leaving {0,1} costs 3 from state 1, leaving {2,3} costs 2 from 3
    k = np.full((4, 4), 9.0)
    k[2, 3] = k[3, 2] = 1.0
    k[0, 1], k[1, 0] = 1.0, 1.5
    k[1, 2] = 3.0
    k[3, 0] = 2.0
    np.fill_diagonal(k, 0.0)
    rf = RateFamily.from_exponents(k)
    ch = aggregate(rf)
    assert ch.nodes == [(0, 1), (2, 3)]
    # state 1 is favoured inside the first pair, so kappa(0) = 0.5 and kappa(1) = 0
    assert ch.measures[0].exponents.tolist() == [0.5, 0.0]
    assert ch.rates.k[0, 1] == pytest.approx(3.0)
    assert ch.rates.k[1, 0] == pytest.approx(2.0)
    chains = rank_recursion(rf)
    assert chains[-1].nodes == [(0, 1, 2, 3)]


def test_predict_state_matches_oracle():
    k = np.array([[0, 0.5, 1.5], [2.0, 0, 1.0], [3.0, 2.5, 0]])
    rf = RateFamily.from_exponents(k)
    for lam, want in ((0.3, 0), (0.75, 1), (1.5, 2)):
        assert predict_state(rf, 0, lam) == want
        assert chain_oracle(rf, 0, lam, 0.03)[want] > 0.9
