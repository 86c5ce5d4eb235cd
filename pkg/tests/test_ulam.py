import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from metastable import ulam
from metastable.environment import paired_tent_env
from metastable.maps import Interval, PairedTentParams, paired_tent_build
from metastable.ulam import DensityVector, Grid, UlamError, UlamOperator

L, R = 0, 1


def tent(a=1.0, b=1.0, eps=0.0):
    return paired_tent_build(PairedTentParams(a, b), eps)


def test_two_cell_rows_on_right_well():
    op = ulam.build_closed(tent(), Grid(np.array([-1.0, -0.5, 0.0, 0.5, 1.0])))
    M = op.matrix.toarray()
    assert np.allclose(M[2:, 2:], 0.5, atol=1e-15)
    assert np.all(M[2:, :2] == 0)


def test_misaligned_grid_rejected():
    with pytest.raises(UlamError):
        ulam.build_closed(tent(1, 1, 0.1), Grid(np.linspace(-1, 1, 7)))


def test_aligned_grid_contains_points_without_slivers():
    g = Grid.aligned(Interval(-1, 1), 64, [-0.5 + 1e-9, 0.3])
    assert g.has_edges([-1, -0.5 + 1e-9, 0.3, 1])
    assert g.lengths.min() > 1e-3 * 2 / 64


def test_push_conserves_mass_under_refinement():
    t = tent(1, 1, 0.1)
    masses = []
    for n in (256, 512):
        g = Grid.for_maps([t], n)
        op = ulam.build_closed(t, g)
        f = DensityVector.uniform(g, [Interval(-1, 0)])
        masses.append(op.push_density(f).mass)
    assert masses == pytest.approx([1.0, 1.0], abs=1e-13)


def test_open_equals_closed_without_holes():
    t = tent(1, 1, 0.0)
    g = Grid.for_maps([t], 128)
    well = g.cell_mask([t.state_interval(L)])
    op = ulam.build_open(t, L, g).matrix.toarray()
    cl = ulam.build_closed(t, g).matrix.toarray()
    assert np.array_equal(op[well], cl[well])
    assert np.all(op[~well] == 0)


def test_open_deficiency_is_hole_length():
    t = tent(1, 1, 0.1)
    g = Grid.for_maps([t], 1024)
    op = ulam.build_open(t, L, g)
    assert op.deficiency == pytest.approx(0.1 / 1.1, abs=1e-12)
    assert (op.matrix - ulam.build_closed(t, g).matrix).toarray()[g.cell_mask([t.state_interval(L)])].max() <= 0


def test_compose_empty_single_and_stochastic():
    t1, t2 = tent(1, 1, 0.1), tent(0.5, 1.5, 0.1)
    g = Grid.for_maps([t1, t2], 256)
    assert (ulam.compose([], g).matrix != sp.identity(g.n)).nnz == 0
    a = ulam.build_closed(t1, g)
    assert ulam.compose([a]) is a
    c = ulam.compose([a, ulam.build_closed(t2, g), a])
    assert np.abs(c.row_sums - 1).max() <= 1e-12


def test_coo_round_trip():
    t = tent(1, 1, 0.1)
    op = ulam.build_open(t, R, Grid.for_maps([t], 64), fiber=3)
    back = UlamOperator.from_coo_text(op.to_coo_text())
    assert back.kind == "open" and back.state == R and back.fiber == 3
    assert np.array_equal(back.matrix.toarray(), op.matrix.toarray())


def test_refinement_coarse_grains_to_coarse_entries():
    t = tent(0.7, 1.3, 0.2)
    gc = Grid.for_maps([t], 64)
    gf = Grid(np.union1d(gc.edges, gc.midpoints))
    Pc = ulam.build_closed(t, gc).matrix.toarray()
    Pf = ulam.build_closed(t, gf).matrix.toarray()
    parent = np.searchsorted(gc.edges, gf.midpoints) - 1
    agg = np.zeros_like(Pc)
    w = gf.lengths / gc.lengths[parent]
    for k in range(gf.n):
        np.add.at(agg[parent[k]], parent, Pf[k] * w[k])
    assert np.abs(agg - Pc).max() <= 1e-12


# -- composition identity ------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 3])
def test_open_closed_composition_identity(n):
    env = paired_tent_env(1.0, [0.5, 1.5], seed=2)
    gap, surv = ulam.open_composition_check(env, env.path(0, n), L, 0.1, n, n_cells=256)
    assert gap <= 1e-12
    assert 0 < surv < 1


def test_composition_without_holes_is_exact():
    env = paired_tent_env(1.0, 1.0)
    gap, surv = ulam.open_composition_check(env, env.path(0, 3), R, 0.0, 3, n_cells=128)
    assert gap == 0.0 and surv == 1.0


def test_open_route_mass_equals_survivor_length():
    env = paired_tent_env(1.0, [0.5, 1.5], seed=4)
    path = env.path(0, 3)
    maps = [env.fiber_map(path, k, 0.1) for k in range(3)]
    good = ulam.survivor_set(maps, L)
    g = Grid.for_maps(maps, 128, [p for iv in good for p in (iv.lo, iv.hi)])
    A, B, gap = ulam.open_composition_matrices(maps, L, g)
    assert gap == 0.0
    assert math.fsum(A.sum(axis=1) * g.lengths) == pytest.approx(sum(iv.length for iv in good), abs=1e-14)
    # one step loses exactly the hole; three steps lose strictly more
    assert sum(iv.length for iv in good) < 1 - 0.05 / 1.05


# -- equivariant data ------------------------------------------------------------------


def test_unperturbed_multiplier_is_one_and_density_uniform():
    env = paired_tent_env(1.0, 1.0)
    tri = ulam.equivariant_triple(env, env.path(0, 1), L, 0.0, grid=Grid.for_maps(env.maps(0.0), 512), K=50)
    assert tri.lambda_seq[0] == pytest.approx(1.0, abs=1e-14)
    w = tri.phi.weights[tri.phi.grid.cell_mask([Interval(-1, 0)])]
    assert np.abs(w - 1).max() <= 1e-12


def test_multiplier_first_order():
    env = paired_tent_env(1.0, 1.0, seed=1)
    tri = ulam.equivariant_triple(env, env.path(0, 1), L, 0.01)
    assert 0.0095 <= 1 - tri.lambda_seq[0] <= 0.0105
    assert tri.phi.mass == pytest.approx(1.0, abs=1e-12)
    assert float(np.sum(tri.nu * tri.phi.cell_masses)) == pytest.approx(1.0, abs=1e-12)
    assert tri.residual_decay < 1


def test_functional_close_to_lebesgue_at_small_eps():
    env = paired_tent_env(1.0, 1.0, seed=1)
    tri = ulam.equivariant_triple(env, env.path(0, 1), L, 0.005, nu_depth=400)
    assert ulam.nu_deviation(tri, Interval(-1, 0)) <= 0.02


def test_density_approaches_unperturbed():
    env = paired_tent_env(1.0, 1.0, seed=1)
    errs = []
    for eps in (0.04, 0.02, 0.01):
        tri = ulam.equivariant_triple(env, env.path(0, 1), L, eps, grid=Grid.for_maps(env.maps(eps), 2**12))
        g = tri.phi.grid
        ref = DensityVector.uniform(g, [Interval(-1, 0)])
        errs.append(ulam.l1_distance(tri.phi, ref))
    assert errs[0] > errs[1] > errs[2] and errs[2] <= 0.05


def test_window_product_trivial_and_birkhoff():
    env = paired_tent_env(1.0, 1.0, seed=1)
    assert ulam.lambda_window_product(env, env.path(0, 1), L, 0.02, 0.0) == 1.0
    val = ulam.lambda_window_product(env, env.path(0, 60), L, 0.02, 1.0)
    assert abs(val - math.exp(-1)) <= 0.05 * math.exp(-1)


# -- properties ---------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 2), st.floats(0.05, 2), st.floats(0, 0.45), st.sampled_from([64, 100, 257]))
def test_closed_rows_stochastic_and_open_dominated(a, b, frac, n):
    t = tent(a, b, frac / max(a, b))
    g = Grid.for_maps([t], n)
    cl = ulam.build_closed(t, g)
    assert np.abs(cl.row_sums - 1).max() <= 1e-12
    assert cl.matrix.data.min() >= 0 and cl.matrix.data.max() <= 1 + 1e-12
    for j in (L, R):
        op = ulam.build_open(t, j, g)
        assert op.row_sums.max() <= 1 + 1e-12
        assert (op.matrix - cl.matrix).toarray().max() <= 1e-15
        assert op.deficiency == pytest.approx(t.hole_measure(j, 1 - j), abs=1e-12)
