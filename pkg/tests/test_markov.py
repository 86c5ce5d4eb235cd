import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metastable import markov
from metastable.markov import JumpOracle, MarkovError

INF = math.inf


def tent_beta(a, b):
    return np.array([[0.0, b], [a, 0.0]])


def chain(m, vals):
    beta = np.zeros((m, m))
    for i in range(m - 1):
        beta[i, i + 1], beta[i + 1, i] = vals[2 * i], vals[2 * i + 1]
    return beta


def test_build_M_two_state():
    assert np.allclose(markov.build_M(tent_beta(1, 1), 0.1), [[0.9, 0.1], [0.1, 0.9]], atol=1e-15)


def test_build_M_zero_eps_is_identity():
    assert np.array_equal(markov.build_M(chain(3, [1, 2, 3, 4]), 0.0), np.eye(3))


def test_build_M_rejects_large_eps():
    with pytest.raises(MarkovError):
        markov.build_M(tent_beta(1, 3), 0.5)


def test_generator_two_state():
    assert np.array_equal(markov.generator(tent_beta(2.0, 1.0)), [[-1.0, 1.0], [2.0, -2.0]])


def test_generator_three_state_diagonal():
    G = markov.generator(chain(3, [1, 2, 1, 1]))
    assert np.array_equal(np.diag(G), [-1, -3, -1])
    assert np.all(G.sum(axis=1) == 0)


def test_generator_equals_scaled_M_minus_identity():
    beta = chain(4, [0.3, 1.2, 0.7, 0.5, 2.0, 1.1])
    for eps in (0.01, 0.1, 0.2):
        assert np.allclose((markov.build_M(beta, eps) - np.eye(4)) / eps, markov.generator(beta), atol=1e-13)


def test_generator_rejects_long_range():
    with pytest.raises(MarkovError):
        markov.generator([[0, 0, 1], [0, 0, 0], [0, 0, 0]])


def test_stationary_symmetric():
    assert np.allclose(markov.stationary(markov.generator(tent_beta(1.3, 1.3))), [0.5, 0.5], atol=1e-15)


def test_stationary_two_state_closed_form():
    G = markov.generator(tent_beta(2.0, 1.0))
    p = markov.stationary(G)
    assert np.allclose(p, [2 / 3, 1 / 3], atol=1e-15)
    assert markov.stationary_residual(G, p) <= 1e-12


def test_expm_identity_at_zero():
    assert np.array_equal(markov.expm(markov.generator(tent_beta(1, 1)), 0.0), np.eye(2))


def test_expm_two_state_value():
    P = markov.expm(markov.generator(tent_beta(1, 1)), 0.5)
    assert P[0, 1] == pytest.approx((1 - math.exp(-1)) / 2, abs=1e-14)


def test_expm_matches_two_state_closed_form():
    G = markov.generator(tent_beta(0.4, 1.7))
    for t in (0.1, 1.0, 7.5):
        assert np.allclose(markov.expm(G, t), markov.expm_two_state(G, t), rtol=1e-12, atol=1e-14)


def test_certain_eventual_jump():
    o = JumpOracle.from_beta(tent_beta(1, 1))
    assert markov.jump_path_probability(o, 0, [(0, INF)], [1]) == 1.0


def test_exponential_holding_cdf():
    o = JumpOracle.from_beta(tent_beta(1, 1))
    assert markov.jump_path_probability(o, 0, [(0, 1)], [1]) == pytest.approx(1 - math.exp(-1), abs=1e-15)


def test_middle_well_target_probability():
    o = JumpOracle.from_beta(chain(3, [1, 1, 2, 1]))
    assert markov.jump_path_probability(o, 1, [(0, INF)], [2]) == pytest.approx(2 / 3, abs=1e-15)


def test_non_neighbour_target_has_zero_probability():
    o = JumpOracle.from_beta(chain(3, [1, 1, 2, 1]))
    assert markov.jump_path_probability(o, 0, [(0, INF)], [2]) == 0.0


def test_oracle_json_schema():
    o = JumpOracle.from_beta(chain(3, [1, 1, 2, 1]))
    d = json.loads(o.to_json([{"j0": 1, "deltas": [[0, 1]], "targets": [2]}]))
    assert set(d) == {"G", "p", "rates", "targets", "queries"}
    assert d["queries"][0]["prob"] == pytest.approx(2 / 3 * (1 - math.exp(-3)))


def test_simulated_chain_matches_oracle():
    o = JumpOracle.from_beta(chain(3, [1, 1, 2, 1]))
    t, s = markov.simulate_jump_chain(o, 1, 2, 200_000, seed=5)
    hit = (t[:, 0] <= 1) & (s[:, 0] == 2) & (t[:, 1] <= 0.5) & (s[:, 1] == 1)
    ref = markov.jump_path_probability(o, 1, [(0, 1), (0, 0.5)], [2, 1])
    assert abs(hit.mean() - ref) <= 4 * math.sqrt(ref * (1 - ref) / hit.size)


def test_fundamental_solve_zero():
    assert np.array_equal(markov.fundamental_solve(markov.generator(tent_beta(1, 1)), np.zeros(2)), np.zeros(2))


def test_fundamental_solve_two_state():
    x = markov.fundamental_solve(markov.generator(tent_beta(1, 1)), np.array([-1.0, 1.0]))
    assert np.allclose(x, [-0.5, 0.5], atol=1e-15)


def test_fundamental_solve_matches_quadrature():
    G = markov.generator(chain(3, [1, 2, 0.5, 1.5]))
    p = markov.stationary(G)
    v = np.array([1.0, -2.0, 0.5])
    v -= p @ v
    assert np.abs(markov.fundamental_solve(G, v) - markov.fundamental_quadrature(G, v)).max() <= 1e-8


def test_fundamental_solve_rejects_uncentred():
    with pytest.raises(MarkovError):
        markov.fundamental_solve(markov.generator(tent_beta(1, 1)), np.array([1.0, 1.0]))


def test_variance_limit_examples():
    G = markov.generator(tent_beta(1, 1))
    assert markov.variance_limit(markov.stationary(G), np.zeros(2), G) == 0.0
    assert markov.variance_limit(markov.stationary(G), np.array([-1.0, 1.0]), G) == pytest.approx(1.0, abs=1e-12)
    G = markov.generator(tent_beta(2, 1))
    assert markov.variance_limit(markov.stationary(G), np.array([-0.5, 1.0]), G) == pytest.approx(1 / 3, abs=1e-12)


rate = st.floats(0.05, 5.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 7), st.lists(rate, min_size=12, max_size=12), st.floats(0, 10), st.floats(0, 10))
def test_semigroup_and_stationarity(m, vals, s, t):
    G = markov.generator(chain(m, vals))
    assert markov.semigroup_defect(G, [(s, t)]) <= 1e-10
    p = markov.stationary(G)
    assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-14
    assert markov.stationary_residual(G, p) <= 1e-12
    assert np.abs(p @ markov.expm(G, t) - p).max() <= 1e-10
    # the diag-normalised vector and the left null vector of G coincide
    w, V = np.linalg.eig(G.T)
    null = np.real(V[:, np.argmin(np.abs(w))])
    assert np.allclose(null / null.sum(), p, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 7), st.lists(rate, min_size=12, max_size=12), st.lists(st.floats(-3, 3), min_size=7, max_size=7))
def test_fundamental_solve_contract(m, vals, vs):
    G = markov.generator(chain(m, vals))
    pi = markov.stationary(G)
    v = np.array(vs[:m])
    v -= pi @ v
    x = markov.fundamental_solve(G, v)
    scale = max(1.0, np.abs(x).max())
    assert np.abs(G @ x + v).max() <= 1e-12 * scale * max(1.0, np.abs(G).max())
    assert abs(pi @ x) <= 1e-12 * scale


@settings(max_examples=100, deadline=None)
@given(rate, rate, st.floats(-3, 3))
def test_variance_limit_matches_two_state_closed_form(a, b, psi_r):
    G = markov.generator(tent_beta(a, b))
    p = markov.stationary(G)
    psi = np.array([-b * psi_r / a, psi_r])  # p . psi = 0
    ref = markov.two_state_variance_limit(a, b, psi_r)
    assert abs(markov.variance_limit(p, psi, G, tol=1e-10) - ref) <= 1e-10 * max(1.0, ref)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.lists(rate, min_size=10, max_size=10), st.data())
def test_jump_marginals_sum_to_one(m, vals, data):
    o = JumpOracle.from_beta(chain(m, vals))
    j0 = data.draw(st.integers(0, m - 1))
    p = data.draw(st.integers(1, 3))
    total = 0.0
    paths = [[j0]]
    for _ in range(p):
        paths = [q + [n] for q in paths for n in (q[-1] - 1, q[-1] + 1) if 0 <= n < m]
    for q in paths:
        total += markov.jump_path_probability(o, j0, [(0, INF)] * p, q[1:])
    assert total == pytest.approx(1.0, abs=1e-12)
