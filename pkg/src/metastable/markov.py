"""
Averaged Markov jump process: transition matrices, generator, stationary
law, semigroup and the closed-form jump laws.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .environment import hash_uniforms


class MarkovError(ValueError):
    pass


def _check_band(beta: np.ndarray):
    m = beta.shape[0]
    if beta.shape != (m, m):
        raise MarkovError("beta must be square")
    if np.any(beta < 0):
        raise MarkovError("beta entries must be nonnegative")
    i, j = np.nonzero(beta)
    if np.any(np.abs(i - j) > 1):
        raise MarkovError("only neighbouring states may be connected")


def build_M(beta: np.ndarray, eps: float) -> np.ndarray:
    """One-step matrix with off-diagonal eps*beta and rows summing to 1."""
    beta = np.array(beta, dtype=float)
    _check_band(beta)
    np.fill_diagonal(beta, 0.0)
    off = eps * beta
    diag = 1.0 - off.sum(axis=1)
    if np.any(diag < 0):
        raise MarkovError(f"eps={eps} too large: diagonal would be negative")
    return off + np.diag(diag)


def generator(beta_bar: np.ndarray) -> np.ndarray:
    """Tridiagonal generator with off-diagonal beta_bar and zero row sums."""
    g = np.array(beta_bar, dtype=float)
    _check_band(g)
    np.fill_diagonal(g, 0.0)
    np.fill_diagonal(g, -g.sum(axis=1))
    return g


def _irreducible(G: np.ndarray) -> bool:
    m = G.shape[0]
    return all(G[i, i + 1] > 0 and G[i + 1, i] > 0 for i in range(m - 1))


def stationary(G: np.ndarray) -> np.ndarray:
    """Probability vector p with p^T G = 0.

    The diagonal-normalised system p^T (G diag(G)^{-1}) = 0 has the same
    solutions, since diag(G) is invertible, so one solve covers both.
    """
    G = np.asarray(G, dtype=float)
    if not _irreducible(G):
        raise MarkovError("generator is reducible")
    m = G.shape[0]
    # detailed balance holds for birth-death chains: exact and positive
    w = np.ones(m)
    for i in range(m - 1):
        w[i + 1] = w[i] * G[i, i + 1] / G[i + 1, i]
    p = w / math.fsum(w)
    # one refinement step against the full linear system
    A = np.vstack([G.T, np.ones(m)])
    rhs = np.concatenate([np.zeros(m), [1.0]])
    r = rhs - A @ p
    p = p + np.linalg.lstsq(A, r, rcond=None)[0]
    return p


def stationary_residual(G: np.ndarray, p: np.ndarray) -> float:
    """max |p^T (G diag(G)^{-1})| plus the normalisation defect."""
    Gn = np.asarray(G) / np.diag(G)[None, :]
    return float(np.max(np.abs(p @ Gn)) + abs(math.fsum(p) - 1.0))


def expm(G: np.ndarray, t: float) -> np.ndarray:
    """P(t) = exp(tG) by scaling and squaring with a Pade approximant."""
    if t < 0:
        raise MarkovError("t must be nonnegative")
    return scipy.linalg.expm(t * np.asarray(G, dtype=float))


def expm_two_state(G: np.ndarray, t: float) -> np.ndarray:
    """Closed form for m = 2: eigenvalues 0 and -(a + b)."""
    b, a = G[0, 1], G[1, 0]
    s = a + b
    e = math.exp(-s * t)
    pi = np.array([a, b]) / s
    return np.outer(np.ones(2), pi) + e * np.array([[b, -b], [-a, a]]) / s


@dataclass(frozen=True)
class JumpOracle:
    G: np.ndarray
    p: np.ndarray
    rates: np.ndarray
    targets: np.ndarray

    @classmethod
    def from_generator(cls, G) -> "JumpOracle":
        G = np.asarray(G, dtype=float)
        rates = -np.diag(G)
        if np.any(rates <= 0):
            raise MarkovError("every state needs a positive exit rate")
        tgt = G / rates[:, None]
        np.fill_diagonal(tgt, 0.0)
        return cls(G, stationary(G), rates, tgt)

    @classmethod
    def from_beta(cls, beta_bar) -> "JumpOracle":
        return cls.from_generator(generator(beta_bar))

    @property
    def m(self) -> int:
        return self.G.shape[0]

    def to_dict(self, queries=()) -> dict:
        return {
            "G": self.G.tolist(),
            "p": self.p.tolist(),
            "rates": self.rates.tolist(),
            "targets": self.targets.tolist(),
            "queries": [
                {"j0": q["j0"], "deltas": q["deltas"], "targets": q["targets"],
                 "prob": jump_path_probability(self, q["j0"], q["deltas"], q["targets"])}
                for q in queries
            ],
        }

    def to_json(self, queries=()) -> str:
        return json.dumps(self.to_dict(queries))


def jump_path_probability(oracle: JumpOracle, j0: int, deltas, targets) -> float:
    """P(holding time k in deltas[k] and k-th jump lands in targets[k], all k).

    Intervals may use ``math.inf`` as an upper end.
    """
    if len(deltas) != len(targets):
        raise MarkovError("one interval per target")
    s = j0
    prob = 1.0
    for (a, b), r in zip(deltas, targets):
        if not 0 <= a <= b:
            raise MarkovError(f"bad interval [{a}, {b}]")
        if not 0 <= r < oracle.m or abs(r - s) != 1:
            return 0.0
        rate = oracle.rates[s]
        prob *= (math.exp(-a * rate) - math.exp(-b * rate)) * oracle.targets[s, r]
        s = r
    return prob


def simulate_jump_chain(oracle: JumpOracle, j0: int, n_jumps: int, n_samples: int, seed: int):
    """Direct simulation of the jump chain.

    Returns (holding_times, states), both of shape (n_samples, n_jumps).
    """
    times = np.empty((n_samples, n_jumps))
    states = np.empty((n_samples, n_jumps), dtype=np.int64)
    cur = np.full(n_samples, j0, dtype=np.int64)
    idx = np.arange(n_samples)
    cum = np.cumsum(oracle.targets, axis=1)
    for k in range(n_jumps):
        u1 = hash_uniforms(seed, idx, stream=2 * k)
        u2 = hash_uniforms(seed, idx, stream=2 * k + 1)
        times[:, k] = -np.log1p(-u1) / oracle.rates[cur]
        nxt = (u2[:, None] >= cum[cur]).sum(axis=1)
        cur = np.minimum(nxt, oracle.m - 1)
        states[:, k] = cur
    return times, states


def fundamental_solve(G: np.ndarray, v: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """x = int_0^inf exp(tG) v dt on the centred subspace.

    Solved as the saddle system G x = -v, pi^T x = 0.
    """
    G = np.asarray(G, dtype=float)
    v = np.asarray(v, dtype=float)
    pi = stationary(G)
    c = float(pi @ v)
    if abs(c) > tol * max(1.0, np.abs(v).max()):
        raise MarkovError(f"v is not centred: pi^T v = {c!r}")
    m = G.shape[0]
    A = np.block([[G, pi[:, None]], [pi[None, :], np.zeros((1, 1))]])
    sol = np.linalg.solve(A, np.concatenate([-v, [0.0]]))
    x = sol[:m]
    # one step of iterative refinement
    r = np.concatenate([-v, [0.0]]) - A @ np.concatenate([x, [sol[m]]])
    x = x + np.linalg.solve(A, r)[:m]
    return x


def fundamental_quadrature(G: np.ndarray, v: np.ndarray, horizon: float = 20.0) -> np.ndarray:
    """int_0^horizon exp(tG) v dt by adaptive quadrature (independent check)."""
    from scipy.integrate import quad_vec

    return quad_vec(lambda t: expm(G, t) @ v, 0.0, horizon, epsabs=1e-13, epsrel=1e-12)[0]


def variance_limit(p: np.ndarray, psi_bar: np.ndarray, G: np.ndarray, tol: float = 1e-12) -> float:
    """2 <p * psi_bar, int_0^inf exp(tG) psi_bar dt>."""
    p = np.asarray(p, dtype=float)
    psi_bar = np.asarray(psi_bar, dtype=float)
    c = float(p @ psi_bar)
    if abs(c) > tol * max(1.0, np.abs(psi_bar).max()):
        raise MarkovError(f"psi_bar is not centred: sum p_j psi_j = {c!r}")
    if not np.any(psi_bar):
        return 0.0
    return 2.0 * float((p * psi_bar) @ fundamental_solve(G, psi_bar, tol))


def two_state_variance_limit(a_bar: float, b_bar: float, psi_right: float) -> float:
    """Closed form of the limit diffusion coefficient for the paired tent."""
    return 2.0 * b_bar * psi_right**2 / (a_bar * (a_bar + b_bar))


def semigroup_defect(G: np.ndarray, pairs) -> float:
    return max(float(np.max(np.abs(expm(G, s + t) - expm(G, s) @ expm(G, t)))) for s, t in pairs)
