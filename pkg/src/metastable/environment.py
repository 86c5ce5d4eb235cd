"""
Bernoulli driving over a finite alphabet.

Symbols are drawn i.i.d. but generated by a counter-based hash of
(seed, k), so any window of the two-sided sequence, including negative
indices, can be regenerated on its own and always agrees with every other
window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .maps import MapError, MWellSpec, PairedTentParams, mwell_build, paired_tent_build

DEFAULT_BETA_FLOOR = 0.05

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


class DrivingError(ValueError):
    """Invalid alphabet, assignment or path query."""


def _mix64(z):
    # splitmix64 finalizer on uint64 arrays
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_uniforms(seed: int, ks, stream: int = 0) -> np.ndarray:
    """Uniform [0, 1) variates keyed on (seed, stream, k).

    Pure function of its arguments; ``ks`` may contain negative integers and
    ``seed`` may be an array broadcasting against ``ks``.
    """
    ks = np.asarray(ks, dtype=np.int64).astype(np.uint64)
    if np.ndim(seed):
        seed = np.asarray(seed).astype(np.uint64)
    else:
        seed = np.uint64(int(seed) % 2**64)
    with np.errstate(over="ignore"):
        key = _mix64(seed + _GOLDEN * np.uint64(stream + 1))
        z = _mix64(key ^ (ks * _GOLDEN + _GOLDEN))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple
    probs: tuple

    def __post_init__(self):
        symbols = tuple(str(s) for s in self.symbols)
        probs = tuple(float(p) for p in self.probs)
        if not symbols:
            raise DrivingError("alphabet needs at least one symbol")
        if len(set(symbols)) != len(symbols):
            raise DrivingError("duplicate symbols")
        if len(probs) != len(symbols):
            raise DrivingError("one probability per symbol required")
        if any(not np.isfinite(p) or p < 0 for p in probs):
            raise DrivingError(f"invalid probabilities {probs}")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise DrivingError(f"probabilities sum to {sum(probs)!r}, not 1")
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "probs", probs)

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def q(self) -> np.ndarray:
        return np.array(self.probs)

    def _cdf(self):
        c = np.cumsum(self.probs)
        c[-1] = np.inf
        return c


@dataclass(frozen=True)
class FiberPath:
    """Symbol indices of sigma^k omega for k in [k_lo, k_hi]."""

    alphabet: Alphabet
    seed: int
    k_lo: int
    k_hi: int
    symbols: np.ndarray = field(repr=False)

    def __len__(self):
        return self.k_hi - self.k_lo + 1

    def __getitem__(self, k: int) -> int:
        if not self.k_lo <= k <= self.k_hi:
            raise DrivingError(f"index {k} outside window [{self.k_lo}, {self.k_hi}]")
        return int(self.symbols[k - self.k_lo])

    def window(self, k0: int, k1: int) -> np.ndarray:
        """Symbols for k0 <= k < k1 (half-open)."""
        if k0 < self.k_lo or k1 - 1 > self.k_hi:
            raise DrivingError(f"window [{k0}, {k1}) not inside [{self.k_lo}, {self.k_hi}]")
        return self.symbols[k0 - self.k_lo : k1 - self.k_lo]

    def extend(self, k_lo: int, k_hi: int) -> "FiberPath":
        """Wider window; previously generated symbols are unchanged."""
        return sample_path(self.alphabet, self.seed, min(k_lo, self.k_lo), max(k_hi, self.k_hi))


def sample_path(alphabet: Alphabet, seed: int, k_lo: int, k_hi: int) -> FiberPath:
    """i.i.d. symbol window keyed on (seed, k)."""
    if k_lo > k_hi:
        raise DrivingError("need k_lo <= k_hi")
    ks = np.arange(k_lo, k_hi + 1, dtype=np.int64)
    if alphabet.size == 1:
        sym = np.zeros(ks.size, dtype=np.int64)
    else:
        u = hash_uniforms(seed, ks)
        sym = np.searchsorted(alphabet._cdf(), u, side="right").astype(np.int64)
    sym.setflags(write=False)
    return FiberPath(alphabet, int(seed), int(k_lo), int(k_hi), sym)


@dataclass(frozen=True)
class ParamAssignment:
    """Per-symbol parameters for a built-in family.

    ``family`` is "paired_tent" (``params[s]`` is PairedTentParams) or
    "m_well" (``params[s]`` is an m x m beta matrix; ``well_slope`` is
    shared).
    """

    family: str
    params: dict
    well_slope: int = 2
    beta_floor: float = DEFAULT_BETA_FLOOR

    def __post_init__(self):
        if self.family not in ("paired_tent", "m_well"):
            raise DrivingError(f"unknown family {self.family!r}")
        params = {}
        for s, v in self.params.items():
            if self.family == "paired_tent":
                if not isinstance(v, PairedTentParams):
                    v = PairedTentParams(v["a"], v["b"])
            else:
                v = MWellSpec(len(v), v, self.well_slope)
            params[str(s)] = v
        object.__setattr__(self, "params", params)
        for s in params:
            beta = self.beta_of(s)
            m = beta.shape[0]
            band = [beta[i, i + d] for i in range(m) for d in (-1, 1) if 0 <= i + d < m]
            if min(band) < self.beta_floor:
                raise DrivingError(
                    f"symbol {s}: neighbour rate {min(band)} below the floor {self.beta_floor}"
                )

    @property
    def m(self) -> int:
        return 2 if self.family == "paired_tent" else next(iter(self.params.values())).m

    def beta_of(self, symbol: str) -> np.ndarray:
        v = self.params[symbol]
        if self.family == "paired_tent":
            # leak L -> R is governed by b, R -> L by a
            return np.array([[0.0, v.b], [v.a, 0.0]])
        return v.beta

    def build(self, symbol: str, eps: float):
        v = self.params[symbol]
        if self.family == "paired_tent":
            return paired_tent_build(v, eps)
        return mwell_build(v, eps)

    def to_dict(self) -> dict:
        if self.family == "paired_tent":
            params = {s: {"a": v.a, "b": v.b} for s, v in self.params.items()}
        else:
            params = {s: {"beta": [list(r) for r in v.hole_lengths]} for s, v in self.params.items()}
        return {"family": self.family, "params": params, "well_slope": self.well_slope,
                "beta_floor": self.beta_floor}


def averaged_beta(assignment: ParamAssignment, alphabet: Alphabet) -> np.ndarray:
    """Probability-weighted average of the per-symbol beta matrices."""
    missing = [s for s in alphabet.symbols if s not in assignment.params]
    if missing:
        raise DrivingError(f"no parameters for symbols {missing}")
    return sum(q * assignment.beta_of(s) for s, q in zip(alphabet.symbols, alphabet.probs))


@dataclass(frozen=True)
class Environment:
    """Alphabet plus parameter assignment; builds and caches the fiber maps."""

    alphabet: Alphabet
    assignment: ParamAssignment
    seed: int = 0

    def __post_init__(self):
        missing = [s for s in self.alphabet.symbols if s not in self.assignment.params]
        if missing:
            raise DrivingError(f"no parameters for symbols {missing}")

    @property
    def m(self) -> int:
        return self.assignment.m

    @property
    def beta_bar(self) -> np.ndarray:
        return averaged_beta(self.assignment, self.alphabet)

    @property
    def beta_min(self) -> float:
        """Smallest neighbour rate over all symbols."""
        out = np.inf
        for s in self.alphabet.symbols:
            b = self.assignment.beta_of(s)
            out = min(out, min(b[i, i + 1] for i in range(self.m - 1)), min(b[i + 1, i] for i in range(self.m - 1)))
        return float(out)

    def path(self, k_lo: int, k_hi: int, seed: int | None = None) -> FiberPath:
        return sample_path(self.alphabet, self.seed if seed is None else seed, k_lo, k_hi)

    def symbol_map(self, sym_index: int, eps: float):
        return _cached_map(self.assignment, self.alphabet.symbols[sym_index], float(eps))

    def maps(self, eps: float) -> list:
        return [self.symbol_map(i, eps) for i in range(self.alphabet.size)]

    def fiber_map(self, path: FiberPath, k: int, eps: float):
        return fiber_map(self.assignment, path, k, eps)

    def to_dict(self) -> dict:
        d = {"symbols": list(self.alphabet.symbols), "probs": list(self.alphabet.probs),
             "seed": self.seed}
        d.update(self.assignment.to_dict())
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


_MAP_CACHE: dict = {}


def _cached_map(assignment: ParamAssignment, symbol: str, eps: float):
    key = (id(assignment), symbol, eps)
    hit = _MAP_CACHE.get(key)
    if hit is None or hit[0] is not assignment:
        if len(_MAP_CACHE) > 4096:
            _MAP_CACHE.clear()
        hit = (assignment, assignment.build(symbol, eps))
        _MAP_CACHE[key] = hit
    return hit[1]


def fiber_map(assignment: ParamAssignment, path: FiberPath, k: int, eps: float):
    """The map T_{sigma^k omega}^eps."""
    return _cached_map(assignment, path.alphabet.symbols[path[k]], float(eps))


def environment_from_dict(d: dict) -> Environment:
    """Parse ``{symbols, probs, family, params, seed}``.

    ``family`` defaults to "paired_tent" when params carry ``a``/``b`` and to
    "m_well" when they carry ``beta``.
    """
    params = d["params"]
    first = next(iter(params.values()))
    family = d.get("family") or ("m_well" if "beta" in first else "paired_tent")
    if family == "m_well":
        params = {s: v["beta"] if isinstance(v, dict) else v for s, v in params.items()}
    alphabet = Alphabet(tuple(d["symbols"]), tuple(d["probs"]))
    assignment = ParamAssignment(family, params, d.get("well_slope", 2),
                                 d.get("beta_floor", DEFAULT_BETA_FLOOR))
    return Environment(alphabet, assignment, int(d.get("seed", 0)))


def environment_from_json(text: str) -> Environment:
    return environment_from_dict(json.loads(text))


def paired_tent_env(a, b, probs=None, seed: int = 0, beta_floor: float = DEFAULT_BETA_FLOOR) -> Environment:
    """Convenience constructor; ``a`` and ``b`` are scalars or per-symbol sequences."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    a, b = np.broadcast_arrays(a, b)
    n = a.size
    probs = np.full(n, 1.0 / n) if probs is None else np.asarray(probs, dtype=float)
    symbols = tuple(f"s{i}" for i in range(n))
    params = {s: PairedTentParams(float(ai), float(bi)) for s, ai, bi in zip(symbols, a, b)}
    return Environment(Alphabet(symbols, tuple(probs)), ParamAssignment("paired_tent", params, beta_floor=beta_floor), seed)


def mwell_env(betas, probs=None, seed: int = 0, well_slope: int = 2,
              beta_floor: float = DEFAULT_BETA_FLOOR) -> Environment:
    """Convenience constructor from one beta matrix or a list of them."""
    betas = np.asarray(betas, dtype=float)
    if betas.ndim == 2:
        betas = betas[None]
    n = betas.shape[0]
    probs = np.full(n, 1.0 / n) if probs is None else np.asarray(probs, dtype=float)
    symbols = tuple(f"s{i}" for i in range(n))
    params = {s: bm.tolist() for s, bm in zip(symbols, betas)}
    return Environment(Alphabet(symbols, tuple(probs)), ParamAssignment("m_well", params, well_slope, beta_floor), seed)
