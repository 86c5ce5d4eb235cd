"""
Holes and escape multipliers of the paired tent map
====================================================

Two expanding tents on [-1, 0] and [0, 1] are glued at the fixed point 0.
Raising the peaks by eps*b and eps*a opens a small hole in each well through
which mass leaks to the other well.  We look at the hole, then at the
per-step surviving mass of the open transfer operator.
"""

import math

import numpy as np

from metastable import ulam
from metastable.environment import mwell_env, paired_tent_env
from metastable.maps import Interval, PairedTentParams, paired_tent_build

# the map at eps = 0.1 with a = b = 1: the left well's hole straddles -1/2
t = paired_tent_build(PairedTentParams(1.0, 1.0), 0.1)
print("T(-1/2) =", t(-0.5), " T(1/2) =", t(0.5))
for iv in t.holes(0, 1):
    print(f"hole piece [{iv.lo:.6f}, {iv.hi:.6f}]")
print("hole measure", t.hole_measure(0, 1), "closed form", 0.1 / 1.1)

# hole measure over eps: mu / eps approaches the escape rate b = 1
for eps in (0.1, 0.04, 0.01, 0.001):
    mu = paired_tent_build(PairedTentParams(1.0, 1.0), eps).hole_measure(0, 1)
    print(f"eps={eps:<6g} mu/eps={mu / eps:.6f}")

# %%
# The open operator on an aligned Ulam grid.  Pushing the uniform density
# from far in the past gives the equivariant density; the mass it keeps in
# one step is the multiplier lambda, with (1 - lambda)/eps close to b.
env = paired_tent_env(1.0, 1.0, seed=0)
for eps in (0.04, 0.02, 0.01):
    tri = ulam.equivariant_triple(env, env.path(0, 1), 0, eps)
    lam = tri.lambda_seq[0]
    print(f"eps={eps:<5g} (1-lambda)/eps={(1 - lam) / eps:.5f}  depth K={tri.K}")

# %%
# With two equally likely symbols b in {0.5, 1.5} the multipliers vary from
# fiber to fiber, but their product over 1/eps fibers still approaches
# exp(-mean b) = exp(-1).
env2 = paired_tent_env(1.0, [0.5, 1.5], seed=0)
prod = ulam.lambda_window_product(env2, env2.path(0, 200), 0, 0.005, 1.0)
print(f"product over 200 fibers {prod:.5f} vs exp(-1) = {math.exp(-1):.5f}")

# %%
# For the tents the uniform density is exactly conditionally invariant:
# every surviving branch maps onto the whole well with constant slope.  So
# the pulled-back density is flat to rounding and (1 - lambda)/eps equals
# 1/(1 + eps*b) exactly.
tri = ulam.equivariant_triple(env, env.path(0, 1), 0, 0.01)
w = tri.phi.weights[tri.phi.grid.cell_mask([Interval(-1, 0)])]
print("density range on the left well:", np.round([w.min(), w.max()], 12))

# %%
# The three-well testbed is less degenerate: a tilted start needs several
# steps to forget its shape, at a fitted geometric rate theta.
env3 = mwell_env([[0, 1.0, 0], [1.0, 0, 2.0], [0, 1.0, 0]], seed=0, well_slope=3)
tri = ulam.equivariant_triple(env3, env3.path(0, 1), 1, 0.02, grid=ulam.Grid.for_maps(env3.maps(0.02), 2**12))
print(f"middle well: 1 - lambda = {1 - tri.lambda_seq[0]:.5f} (eps*rate = 0.06), theta = {tri.residual_decay:.3f}")
