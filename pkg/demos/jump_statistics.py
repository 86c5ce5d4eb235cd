"""
Metastable jumps and the averaged Markov chain
==============================================

For small eps an orbit lingers in one well for about 1/(eps*rate) steps
and then hops to a neighbour.  Rescaling time by eps, the sequence of
wells visited looks like a continuous-time Markov chain whose rates are
the symbol-averaged hole sizes.
"""

import math

import numpy as np

from metastable import jumps, markov
from metastable.environment import mwell_env, paired_tent_env

# one orbit of the paired tent at eps = 0.01
env = paired_tent_env(1.0, 1.0, seed=0)
tr = jumps.simulate(env, env.path(0, 1), 0.01, 0.3, 5000)
trace = jumps.extract_jumps(tr)
print("first jump times:", trace.times[:8].tolist())
print("mean scaled holding time:", round(float(np.mean(0.01 * trace.holding)), 3))

# %%
# The holding time of the first jump against the exponential law.
grid = np.round(np.arange(1, 31) * 0.1, 10)
res = jumps.compare_holding_law(env, 0.01, 0, 100_000, grid)
print(f"sup |P(eps T > t) - exp(-t)| = {res['sup_distance']:.4f} over {res['n_samples']} samples")
for t, emp in list(zip(grid, res["empirical"]))[4::5]:
    print(f"  t={t:<4g} empirical {emp:.4f}  exponential {math.exp(-t):.4f}")

# %%
# Three wells: the middle one leaks to the right twice as fast as to the left.
beta = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 2.0], [0.0, 1.0, 0.0]])
env3 = mwell_env(beta, seed=0)
oracle = markov.JumpOracle.from_beta(env3.beta_bar)
print("generator:\n", oracle.G)
print("stationary distribution:", np.round(oracle.p, 4))

deltas, targets = [(0.0, 1.0), (0.0, 0.5)], [2, 1]
d = jumps.jump_distribution(env3, 0.01, 1, 50_000, deltas, targets)
t, s = markov.simulate_jump_chain(oracle, 1, 2, 500_000, seed=0)
chain = np.mean((t[:, 0] <= 1) & (s[:, 0] == 2) & (t[:, 1] <= 0.5) & (s[:, 1] == 1))
print(f"two-jump event: map {d.estimate:.4f} [{d.wilson[0]:.4f}, {d.wilson[1]:.4f}], "
      f"chain simulation {chain:.4f}, closed form {d.oracle:.4f}")

# %%
# The map's holding times are geometric with parameter eps*rate, not
# exponential; the discrete law shifts this probability by O(eps).
rate1, rate2, p12 = 3.0, 1.0, 2 / 3
geo = (1 - (1 - 0.01 * rate1) ** 100) * p12 * (1 - (1 - 0.01 * rate2) ** 50)
print(f"geometric-holding prediction at eps=0.01: {geo:.4f}")
