"""
Orbit simulation of the random maps and extraction of metastable jumps.

Jump statistics are gathered by advancing many initial points at once.
In the quenched mode every sample follows the same omega path, so each
step applies a single map to the whole batch; in the annealed mode every
sample carries its own path, keyed on (seed, sample index).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .environment import Environment, FiberPath, hash_uniforms
from .markov import JumpOracle, jump_path_probability


class NeighbourViolation(RuntimeError):
    """A jump connected two non-adjacent states."""


@dataclass
class Trajectory:
    seed: int
    eps: float
    x0: float
    n: int
    labels: np.ndarray
    orbit: np.ndarray | None = None
    boundary_hits: int = 0


@dataclass
class JumpTrace:
    times: np.ndarray
    holding: np.ndarray
    states: np.ndarray


@dataclass
class EmpiricalJumpDist:
    n_samples: int
    deltas: list
    targets: list
    hits: int
    estimate: float
    wilson: tuple
    censored: int
    mode: str
    oracle: float | None = None
    boundary_hits: int = 0
    times: np.ndarray | None = field(default=None, repr=False)
    states: np.ndarray | None = field(default=None, repr=False)
    censored_mask: np.ndarray | None = field(default=None, repr=False)

    def summary(self) -> dict:
        return {
            "query": {"deltas": [list(d) for d in self.deltas], "targets": list(self.targets)},
            "mode": self.mode,
            "n_samples": self.n_samples,
            "hits": self.hits,
            "censored": self.censored,
            "boundary_hits": self.boundary_hits,
            "estimate": self.estimate,
            "wilson_lo": self.wilson[0],
            "wilson_hi": self.wilson[1],
            "oracle_value": self.oracle,
        }


def wilson_interval(hits: int, n: int, level: float = 0.95) -> tuple:
    if n == 0:
        return (0.0, 1.0)
    z = norm.ppf(0.5 + level / 2)
    ph = hits / n
    den = 1 + z * z / n
    mid = (ph + z * z / (2 * n)) / den
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if hits == 0 else max(0.0, mid - half)
    hi = 1.0 if hits == n else min(1.0, mid + half)
    return (lo, hi)


# -- single orbits ----------------------------------------------------------------


def simulate(env: Environment, path: FiberPath, eps: float, x0: float, n: int,
             keep_orbit: bool = False, k0: int = 0) -> Trajectory:
    """Orbit of x0 under the cocycle starting at fiber k0; labels has n+1 entries."""
    t0 = env.symbol_map(0, eps)
    if not t0.state_space.contains(x0):
        raise ValueError(f"x0={x0} outside the state space")
    p = path.extend(k0, k0 + max(n, 1))
    syms = p.window(k0, k0 + n)
    maps = env.maps(eps)
    inner = set(t0.boundary_points[1:-1])
    labels = np.empty(n + 1, dtype=np.int64)
    orbit = np.empty(n + 1) if keep_orbit else None
    x = float(x0)
    labels[0] = t0.label(x)
    if keep_orbit:
        orbit[0] = x
    hits = 0
    for i, s in enumerate(syms, start=1):
        x = maps[s](x)
        if x in inner:
            hits += 1
        labels[i] = t0.label(x)
        if keep_orbit:
            orbit[i] = x
    return Trajectory(p.seed, eps, float(x0), n, labels, orbit, hits)


def extract_jumps(labels) -> JumpTrace:
    """Jump times, holding times and post-jump states from a label sequence."""
    if isinstance(labels, Trajectory):
        labels = labels.labels
    z = np.asarray(labels)
    t = np.flatnonzero(z[1:] != z[:-1]) + 1
    if t.size and np.any(np.abs(np.diff(z[np.concatenate([[0], t])])) != 1):
        raise NeighbourViolation("observed a jump between non-adjacent states")
    hold = np.diff(np.concatenate([[0], t]))
    return JumpTrace(t, hold, z[t])


def labels_from_jumps(times, states, z0: int, n: int) -> np.ndarray:
    """Inverse of extract_jumps: label sequence of length n+1."""
    z = np.full(n + 1, z0, dtype=np.int64)
    for t, s in zip(times, states):
        z[t:] = s
    return z


# -- batched jump sampling --------------------------------------------------------


def _initial_points(env: Environment, j0: int, n: int, seed: int) -> np.ndarray:
    iv = env.symbol_map(0, 0.0).state_interval(j0)
    u = hash_uniforms(seed, np.arange(n), stream=1_000_003)
    # open interval so no start sits on a boundary point
    return iv.lo + iv.length * (u + 0.5 / 2**53)


def sample_jumps(env: Environment, eps: float, j0: int, N: int, p: int, seed: int | None = None,
                 mode: str = "quenched", horizon: int | None = None, x0=None):
    """First ``p`` jump times and targets for N initial points drawn uniformly on I_{j0}.

    Returns (times, states, censored, boundary_hits); ``times`` holds the
    holding times in steps and is -1 where censored.
    """
    if mode not in ("quenched", "annealed"):
        raise ValueError(f"unknown mode {mode!r}")
    seed = env.seed if seed is None else int(seed)
    if horizon is None:
        horizon = int(math.ceil(50.0 / (eps * env.assignment.beta_floor))) * p if eps > 0 else 0
    maps = env.maps(eps)
    t0 = maps[0]
    x = _initial_points(env, j0, N, seed) if x0 is None else np.array(x0, dtype=float)
    idx = np.arange(N)
    cur = np.full(N, j0, dtype=np.int64)
    last_t = np.zeros(N, dtype=np.int64)
    count = np.zeros(N, dtype=np.int64)
    times = np.full((N, p), -1, dtype=np.int64)
    states = np.full((N, p), -1, dtype=np.int64)
    inner = np.asarray(t0.boundary_points[1:-1])
    hits = 0
    alpha = env.alphabet.size
    chunk = 4096
    path_syms = None
    sample_seeds = None
    if mode == "annealed":
        sample_seeds = hash_uniforms(seed, idx, stream=77) * 2**53
        sample_seeds = sample_seeds.astype(np.uint64)
    n = 0
    while idx.size and n < horizon:
        if alpha == 1:
            x = maps[0].evaluate(x)
        elif mode == "quenched":
            if n % chunk == 0:
                path_syms = env.path(n, n + chunk - 1, seed).symbols
            x = maps[path_syms[n % chunk]].evaluate(x)
        else:
            u = hash_uniforms(sample_seeds[idx], np.full(idx.size, n))
            sym = np.searchsorted(env.alphabet._cdf(), u, side="right")
            for s in range(alpha):
                sel = sym == s
                if sel.any():
                    x[sel] = maps[s].evaluate(x[sel])
        n += 1
        if inner.size:
            hits += int(np.isin(x, inner).sum())
        z = t0.label(x)
        moved = np.flatnonzero(z != cur)
        if moved.size:
            if np.any(np.abs(z[moved] - cur[moved]) != 1):
                raise NeighbourViolation("observed a jump between non-adjacent states")
            g = idx[moved]
            c = count[moved]
            times[g, c] = n - last_t[moved]
            states[g, c] = z[moved]
            last_t[moved] = n
            count[moved] += 1
            cur[moved] = z[moved]
            done = count >= p
            if done.any():
                keep = ~done
                idx, x, cur, last_t, count = idx[keep], x[keep], cur[keep], last_t[keep], count[keep]
    censored = np.zeros(N, dtype=bool)
    censored[idx] = True
    return times, states, censored, hits


def jump_distribution(env: Environment, eps: float, j0: int, N: int, deltas, targets,
                      seed: int | None = None, mode: str = "quenched",
                      horizon: int | None = None) -> EmpiricalJumpDist:
    """Fraction of samples with eps*T_k in deltas[k] and z_k = targets[k] for all k."""
    p = len(targets)
    times, states, cens, hits = sample_jumps(env, eps, j0, N, p, seed, mode, horizon)
    ok = ~cens
    scaled = eps * times[ok]
    good = np.ones(ok.sum(), dtype=bool)
    for k, ((a, b), r) in enumerate(zip(deltas, targets)):
        good &= (scaled[:, k] >= a) & (scaled[:, k] <= b) & (states[ok, k] == r)
    n_used = int(ok.sum())
    h = int(good.sum())
    oracle = jump_path_probability(JumpOracle.from_beta(env.beta_bar), j0, deltas, targets)
    return EmpiricalJumpDist(n_used, [tuple(d) for d in deltas], list(targets), h,
                             h / n_used if n_used else float("nan"), wilson_interval(h, n_used),
                             int(cens.sum()), mode, oracle, hits, times, states, cens)


def compare_holding_law(env: Environment, eps: float, j0: int, N: int, t_grid, seed: int | None = None,
                        mode: str = "quenched") -> dict:
    """sup over t_grid of |P(eps T_1 > t) - exp(-t r_j0)|."""
    rate = float(-JumpOracle.from_beta(env.beta_bar).G[j0, j0])
    t_grid = np.asarray(t_grid, dtype=float)
    if eps <= 0:
        return {"degenerate": True, "sup_distance": float("nan"), "eps": eps, "rate": rate,
                "n_samples": 0, "censored": 0}
    times, _, cens, _ = sample_jumps(env, eps, j0, N, 1, seed, mode)
    scaled = np.sort(eps * times[~cens, 0])
    surv = 1.0 - np.searchsorted(scaled, t_grid, side="right") / scaled.size
    dist = np.abs(surv - np.exp(-t_grid * rate))
    return {"degenerate": False, "sup_distance": float(dist.max()), "eps": eps, "rate": rate,
            "n_samples": int(scaled.size), "censored": int(cens.sum()),
            "t_grid": t_grid.tolist(), "empirical": surv.tolist(), "distance": dist.tolist()}


# -- output -------------------------------------------------------------------------


def samples_csv(dist: EmpiricalJumpDist) -> str:
    p = len(dist.targets)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["sample_id"] + [f"t_{k + 1}" for k in range(p)] + [f"z_{k + 1}" for k in range(p)] + ["censored"])
    abs_t = np.where(dist.times >= 0, np.cumsum(np.maximum(dist.times, 0), axis=1), -1)
    for i in range(dist.times.shape[0]):
        w.writerow([i] + abs_t[i].tolist() + dist.states[i].tolist() + [int(dist.censored_mask[i])])
    return buf.getvalue()


def summary_json(dist: EmpiricalJumpDist) -> str:
    return json.dumps(dist.summary(), indent=2)
