import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from metastable import diffusion, markov, ulam
from metastable.diffusion import DiffusionError, Observable
from metastable.environment import paired_tent_env

SUN = diffusion.two_state_observable(-1.0, 1.0)


def identity_observable(n_symbols=1):
    return Observable([-1.0, 1.0], np.tile([[[0.0, 1.0]]], (n_symbols, 1, 1)))


def stationary_of(env):
    return markov.stationary(markov.generator(env.beta_bar))


# -- observables ------------------------------------------------------------------


def test_observable_evaluation_and_exact_integrals():
    psi = Observable([0.0, 1.0, 2.0], [[[1.0, 2.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]]])
    assert psi(0.5) == pytest.approx(2.0)
    assert psi(1.5) == pytest.approx(1.5**3)
    assert psi.integrate(0.0, 2.0) == pytest.approx(2.0 + (16 - 1) / 4)
    c2 = psi.cell_integrals(np.array([0.0, 2.0]), power=2)[0]
    assert c2 == pytest.approx(quad(lambda x: psi(x) ** 2, 0, 1)[0] + quad(lambda x: psi(x) ** 2, 1, 2)[0])


def test_sup_norm_and_variation():
    psi = Observable([-1.0, 1.0], [[[0.0, -3.0, 0.0, 1.0]]])  # x^3 - 3x
    assert psi.sup_norm() == pytest.approx(2.0)
    assert psi.variation() == pytest.approx(4.0)
    step = diffusion.two_state_observable(-0.5, 1.0)
    assert step.variation() == pytest.approx(1.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.lists(st.floats(-1, 1), min_size=2, max_size=6))
def test_cell_integrals_match_quadrature(c, cuts):
    psi = Observable([-1.0, 0.3, 1.0], [[c, c[::-1]]])
    edges = np.unique(np.concatenate([[-1.0, 1.0], cuts]))
    got = psi.cell_integrals(edges)
    ref = [quad(psi, a, b, points=[0.3] if a < 0.3 < b else None)[0] for a, b in zip(edges[:-1], edges[1:])]
    assert np.allclose(got, ref, atol=1e-10)


# -- centering ----------------------------------------------------------------------


def test_centred_observable_unchanged():
    env = paired_tent_env(1.0, 1.0)
    assert diffusion.center_fibrewise(SUN, stationary_of(env), env) is SUN


def test_constant_observable_centres_to_zero():
    env = paired_tent_env([1.0, 2.0], 1.0)
    one = Observable([-1.0, 1.0], [[[1.0]]])
    assert diffusion.center_fibrewise(one, stationary_of(env), env).is_zero()


def test_identity_observable_on_symmetric_tents():
    env = paired_tent_env(1.0, 1.0)
    psi = identity_observable()
    pv = diffusion.psi_vector(psi, env)
    assert np.allclose(pv.values, [[-0.5, 0.5]])
    assert diffusion.center_fibrewise(psi, stationary_of(env), env) is psi


def test_centering_with_explicit_densities_matches_uniform():
    env = paired_tent_env(2.0, 1.0)
    g = ulam.Grid.for_maps(env.maps(0.0), 256)
    phis = [ulam.DensityVector.uniform(g, [env.symbol_map(0, 0.0).state_interval(j)]) for j in range(2)]
    psi = identity_observable()
    a = diffusion.psi_vector(psi, env).values
    b = diffusion.psi_vector(psi, env, phis).values
    assert np.allclose(a, b, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.1, 2), min_size=2, max_size=2), st.lists(st.floats(0.1, 2), min_size=2, max_size=2),
       st.lists(st.floats(-3, 3), min_size=16, max_size=16))
def test_centering_idempotent_and_centred(a, b, c):
    env = paired_tent_env(a, b, probs=[0.3, 0.7])
    psi = Observable([-1.0, -0.2, 1.0], np.reshape(c, (2, 2, 4)))
    p = stationary_of(env)
    once = diffusion.center_fibrewise(psi, p, env)
    twice = diffusion.center_fibrewise(once, p, env)
    assert np.array_equal(once.coeffs, twice.coeffs)
    assert np.abs(diffusion.psi_vector(once, env).values @ p).max() <= 1e-12 * max(1.0, np.abs(c).max())


def test_eps_centering_residual_and_limit():
    env = paired_tent_env(2.0, 1.0, seed=3)
    psi = identity_observable()
    p = stationary_of(env)
    c0 = float((diffusion.psi_vector(psi, env).values @ p)[0])
    assert c0 == pytest.approx(-1 / 6)
    gaps = []
    for eps in (0.04, 0.02, 0.01):
        bank = ulam.OperatorBank(env, eps, n_cells=2**12)
        path = env.path(-ulam.default_depth(eps), 3)
        m = diffusion.closed_densities(bank, path.window(-ulam.default_depth(eps), 0), path.window(0, 3))
        dens = [ulam.DensityVector.from_masses(bank.grid, x) for x in m]
        res = diffusion.eps_center(psi, dens, path.window(0, 4))
        assert np.abs(res.residuals).max() <= 1e-10
        gaps.append(abs(res.shifts.mean() - c0))
    assert gaps[0] > gaps[1] > gaps[2]
    const = Observable([-1.0, 1.0], [[[2.5]]])
    assert np.allclose(diffusion.eps_center(const, dens, [0] * len(dens)).shifts, 2.5)


# -- variance estimators ------------------------------------------------------------------


def test_zero_observable_has_zero_variance():
    env = paired_tent_env(1.0, 1.0)
    zero = Observable([-1.0, 1.0], [[[0.0]]])
    assert diffusion.variance_trajectory(env, zero, 0.02, 100, 10).sigma2 == 0.0
    assert diffusion.variance_series(env, zero, 0.02).sigma2 == 0.0
    assert diffusion.clt_check(env, zero, 0.02, 100, 10).degenerate


def test_trajectory_refuses_short_runs():
    with pytest.raises(DiffusionError):
        diffusion.variance_trajectory(paired_tent_env(1.0, 1.0), SUN, 0.02, 200, 10)


@pytest.fixture(scope="module")
def series_at_004():
    env = paired_tent_env(1.0, 1.0, seed=1)
    bank = ulam.OperatorBank(env, 0.04, n_cells=2**12)
    return env, bank, diffusion.variance_series(env, SUN, 0.04, bank=bank)


def test_series_near_limit_with_decay(series_at_004):
    _, _, est = series_at_004
    assert 0.75 <= est.eps_sigma2 <= 1.05
    assert 0 < est.theta < 1
    assert est.tail_bound >= 0


def test_series_truncation_contract(series_at_004):
    env, bank, est = series_at_004
    longer = diffusion.variance_series(env, SUN, 0.04, n_max=2 * est.n_max, bank=bank)
    assert abs(longer.sigma2 - est.sigma2) <= est.tail_bound


def test_series_scale_equivariance(series_at_004):
    env, bank, est = series_at_004
    scaled = diffusion.variance_series(env, SUN.scaled(3.0), 0.04, bank=bank)
    assert scaled.sigma2 == pytest.approx(9.0 * est.sigma2, rel=1e-10)


def test_routes_agree(series_at_004):
    env, _, ser = series_at_004
    traj = diffusion.variance_trajectory(env, SUN, 0.04, 5000, 600)
    assert abs(traj.eps_sigma2 - ser.eps_sigma2) <= 3 * 0.04 * math.hypot(traj.stderr, ser.error)


def test_trajectory_is_deterministic():
    env = paired_tent_env(1.0, 1.0, seed=1)
    a = diffusion.variance_trajectory(env, SUN, 0.1, 400, 20, seed=5)
    b = diffusion.variance_trajectory(env, SUN, 0.1, 400, 20, seed=5)
    assert a.sigma2 == b.sigma2 and a.stderr == b.stderr and a.sigma2 > 0


def test_clt_small_run():
    env = paired_tent_env(1.0, 1.0, seed=2)
    rep = diffusion.clt_check(env, SUN, 0.05, 2000, 3000, seed=2)
    assert not rep.degenerate
    assert rep.ks <= 0.04 and abs(rep.skewness) <= 0.15


# -- sweeps -------------------------------------------------------------------------


@pytest.mark.parametrize("a,b,psi_r,limit", [(1.0, 1.0, 1.0, 1.0), (2.0, 1.0, 1.0, 1 / 3)])
def test_limit_value_closed_form(a, b, psi_r, limit):
    env = paired_tent_env(a, b)
    psi = diffusion.two_state_observable(-b * psi_r / a, psi_r)
    assert diffusion.limit_value(env, psi) == pytest.approx(limit, abs=1e-12)


def test_zero_sweep_and_csv():
    env = paired_tent_env(1.0, 1.0)
    zero = diffusion.two_state_observable(0.0, 0.0)
    res = diffusion.diffusion_sweep(env, zero, [0.04, 0.02], route="trajectory", n=100, N=10)
    assert all(r["eps_sigma2"] == 0 and r["limit_value"] == 0 for r in res["rows"])
    rows = list(csv.reader(io.StringIO(diffusion.sweep_csv(res["rows"]))))
    assert rows[0] == ["eps", "sigma2", "eps_sigma2", "stderr", "route", "limit_value"]
    assert len(rows) == 3


def test_richardson_recovers_line():
    assert diffusion.richardson([0.04, 0.02, 0.01], [1.04 - 0.5, 1.02 - 0.5, 1.01 - 0.5]) == pytest.approx(0.5)
