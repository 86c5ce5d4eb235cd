"""
Randomised invariant suites that run without a test framework.

Each suite draws its cases from a seeded generator and records how many
cases failed together with the first failure message.
"""

from __future__ import annotations

import json

import numpy as np

from .. import diffusion, jumps, markov, ulam
from ..environment import environment_from_json, mwell_env, paired_tent_env, sample_path, Alphabet
from ..maps import (MWellSpec, PairedTentParams, intersect_lists, map_from_json, map_to_json,
                    mwell_build, normalize, paired_tent_build)
from .config import ExperimentConfig


def _random_tent(rng):
    a, b = rng.uniform(0.05, 2.0, 2)
    eps = rng.uniform(0.0, 0.45) / max(a, b)
    return paired_tent_build(PairedTentParams(a, b), eps)


def _random_mwell_beta(rng, m):
    beta = np.zeros((m, m))
    for i in range(m - 1):
        beta[i, i + 1], beta[i + 1, i] = rng.uniform(0.05, 2.0, 2)
    return beta


def _random_mwell(rng):
    m = int(rng.integers(2, 6))
    beta = _random_mwell_beta(rng, m)
    eps = rng.uniform(0.0, 0.9) / beta.sum(axis=1).max()
    return mwell_build(MWellSpec(m, beta.tolist(), int(rng.integers(2, 5))), eps)


def _random_map(rng):
    return _random_tent(rng) if rng.random() < 0.5 else _random_mwell(rng)


def _suite(n, rng, check):
    fails = 0
    first = ""
    for i in range(n):
        try:
            msg = check(rng)
        except Exception as exc:  # a crash counts as a failed case
            msg = f"{type(exc).__name__}: {exc}"
        if msg:
            fails += 1
            first = first or f"case {i}: {msg}"
    return {"cases": n, "failures": fails, "first_failure": first}


def row_stochastic(n_cells):
    def check(rng):
        t = _random_map(rng)
        op = ulam.build_closed(t, ulam.Grid.for_maps([t], n_cells))
        d = op.matrix.data
        if d.size and (d.min() < 0 or d.max() > 1 + 1e-12):
            return "entry outside [0, 1]"
        err = np.abs(op.row_sums - 1).max()
        return f"row sum defect {err:.3g}" if err > 1e-12 else ""
    return check


def substochastic_order(n_cells):
    def check(rng):
        t = _random_map(rng)
        g = ulam.Grid.for_maps([t], n_cells)
        cl = ulam.build_closed(t, g)
        j = int(rng.integers(0, t.m))
        op = ulam.build_open(t, j, g)
        well = g.cell_mask([t.state_interval(j)])
        diff = (op.matrix - cl.matrix).toarray()[well]
        if diff.max() > 1e-15:
            return "open entry exceeds closed entry"
        if op.row_sums.max() > 1 + 1e-12:
            return "open row sum above 1"
        hole = sum(h.length for h in t.escape_set(j))
        if abs(op.deficiency - hole) > 1e-12:
            return f"deficiency {op.deficiency!r} vs hole length {hole!r}"
        return ""
    return check


def neighbour_only(rng):
    m = int(rng.integers(2, 5))
    env = mwell_env(_random_mwell_beta(rng, m), seed=int(rng.integers(2**31)))
    eps = float(rng.uniform(0.05, 0.2)) / env.beta_bar.sum(axis=1).max()
    j0 = int(rng.integers(0, m))
    t, s, cens, _ = jumps.sample_jumps(env, eps, j0, 64, 3, mode="quenched")
    prev = np.full(64, j0)
    for k in range(3):
        ok = ~cens & (s[:, k] >= 0)
        if np.any(np.abs(s[ok, k] - prev[ok]) != 1):
            return "non-neighbour jump"
        prev = np.where(s[:, k] >= 0, s[:, k], prev)
    tr = jumps.simulate(env, env.path(0, 1), eps, float(rng.uniform(0, m)), 300)
    jumps.extract_jumps(tr)
    return ""


def holes_match_preimages(rng):
    t = _random_map(rng)
    for i in range(t.m):
        for j in range(t.m):
            if i == j:
                continue
            a = normalize(t.holes(i, j))
            b = intersect_lists([t.state_interval(i)], t.preimage(t.state_interval(j)))
            if len(a) != len(b) or any(abs(x.lo - y.lo) > 1e-15 or abs(x.hi - y.hi) > 1e-15 for x, y in zip(a, b)):
                return f"holes({i},{j}) differ from the preimage"
    return ""


def _random_observable(rng, n_symbols, lo, hi):
    k = int(rng.integers(1, 5))
    br = np.sort(np.concatenate([[lo, hi], rng.uniform(lo, hi, k)]))
    br = np.unique(br)
    coeffs = rng.normal(size=(n_symbols, br.size - 1, int(rng.integers(1, 5))))
    return diffusion.Observable(br, coeffs)


def centering(rng):
    if rng.random() < 0.5:
        n = int(rng.integers(1, 4))
        env = paired_tent_env(rng.uniform(0.1, 2, n), rng.uniform(0.1, 2, n), rng.dirichlet(np.ones(n)))
    else:
        m = int(rng.integers(2, 5))
        env = mwell_env(_random_mwell_beta(rng, m))
    ss = env.symbol_map(0, 0.0).state_space
    psi = _random_observable(rng, env.alphabet.size, ss.lo, ss.hi)
    p = markov.stationary(markov.generator(env.beta_bar))
    once = diffusion.center_fibrewise(psi, p, env)
    twice = diffusion.center_fibrewise(once, p, env)
    if not np.array_equal(once.coeffs, twice.coeffs):
        return "centering is not idempotent"
    resid = np.abs(diffusion.psi_vector(once, env).values @ p).max()
    return f"centering residual {resid:.3g}" if resid > 1e-12 * max(1, np.abs(psi.coeffs).max()) else ""


def determinism(rng):
    n = int(rng.integers(1, 5))
    alpha = Alphabet(tuple(f"x{i}" for i in range(n)), tuple(rng.dirichlet(np.ones(n))))
    seed = int(rng.integers(0, 2**63))
    lo = int(rng.integers(-1000, 1000))
    hi = lo + int(rng.integers(0, 500))
    a = sample_path(alpha, seed, lo, hi)
    b = sample_path(alpha, seed, lo, hi)
    if not np.array_equal(a.symbols, b.symbols):
        return "path regeneration differs"
    mid = int(rng.integers(lo, hi + 1))
    sub = sample_path(alpha, seed, mid, hi)
    if not np.array_equal(sub.symbols, a.window(mid, hi + 1)):
        return "sub-window differs"
    ext = a.extend(lo - 50, hi + 50)
    if not np.array_equal(ext.window(lo, hi + 1), a.symbols):
        return "extension changed symbols"
    return ""


def round_trips(rng):
    t = _random_map(rng)
    back = map_from_json(map_to_json(t))
    x = rng.uniform(t.state_space.lo, t.state_space.hi, 50)
    if not np.array_equal(back.evaluate(x), t.evaluate(x)):
        return "map JSON round trip changed the map"
    n = int(rng.integers(1, 4))
    env = paired_tent_env(rng.uniform(0.1, 2, n), rng.uniform(0.1, 2, n), seed=int(rng.integers(2**62)))
    if environment_from_json(env.to_json()).to_json() != env.to_json():
        return "environment JSON round trip differs"
    cfg = ExperimentConfig("jumps", int(rng.integers(2**62)), "out", {5: {"N": int(rng.integers(1, 100))}})
    if ExperimentConfig.from_json(cfg.to_json()).to_json() != cfg.to_json():
        return "config JSON round trip differs"
    # jump trace reconstruction from a random neighbour walk
    m = int(rng.integers(2, 6))
    k = int(rng.integers(0, 20))
    times = np.cumsum(rng.integers(1, 10, k))
    z0 = int(rng.integers(0, m))
    states, cur = [], z0
    for _ in range(k):
        nxt = [s for s in (cur - 1, cur + 1) if 0 <= s < m]
        cur = int(rng.choice(nxt))
        states.append(cur)
    n_steps = int(times[-1]) + 3 if k else 5
    tr = jumps.extract_jumps(jumps.labels_from_jumps(times, states, z0, n_steps))
    if not (np.array_equal(tr.times, times) and np.array_equal(tr.states, states)):
        return "jump trace round trip differs"
    # simulation determinism
    env = paired_tent_env(1.0, 1.0, seed=int(rng.integers(2**31)))
    x0 = float(rng.uniform(-1, 1))
    a = jumps.simulate(env, env.path(0, 1), 0.1, x0, 200).labels
    b = jumps.simulate(env, env.path(0, 1), 0.1, x0, 200).labels
    return "" if np.array_equal(a, b) else "simulation not deterministic"


def generator_laws(rng):
    m = int(rng.integers(2, 7))
    G = markov.generator(_random_mwell_beta(rng, m))
    if np.abs(G.sum(axis=1)).max() > 1e-14:
        return "generator rows do not sum to 0"
    p = markov.stationary(G)
    if markov.stationary_residual(G, p) > 1e-12:
        return "stationary residual too large"
    t = float(rng.uniform(0, 5))
    P = markov.expm(G, t)
    if P.min() < -1e-14 or np.abs(P.sum(axis=1) - 1).max() > 1e-12:
        return "exp(tG) is not stochastic"
    return ""


def run_all(cases: int = 200, seed: int = 0, n_cells: int = 256) -> dict:
    suites = {
        "row_stochastic": row_stochastic(n_cells),
        "substochastic_order": substochastic_order(n_cells),
        "neighbour_only_transitions": neighbour_only,
        "holes_match_preimages": holes_match_preimages,
        "centering_idempotence": centering,
        "path_determinism": determinism,
        "round_trips": round_trips,
        "generator_laws": generator_laws,
    }
    out = {}
    for i, (name, check) in enumerate(suites.items()):
        rng = np.random.default_rng([seed, i])
        out[name] = _suite(cases, rng, check)
    return out
