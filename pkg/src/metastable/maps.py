"""
Piecewise-affine expanding interval maps with a metastable partition.

A map is a list of affine branches tiling a state space, together with the
boundary points b_0 < ... < b_m that cut the state space into the
initially invariant wells I_1, ..., I_m.  Everything here is exact up to
floating-point representation: preimages and holes are obtained by affine
inversion, never by sampling.

States are indexed from 0 (I_1 is state 0).
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class MapError(ValueError):
    """Invalid map description or out-of-range query."""


@dataclass(frozen=True, order=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise MapError(f"interval with lo > hi: [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def intersect(self, other: "Interval") -> "Interval | None":
        lo = max(self.lo, other.lo)
        hi = min(self.hi, other.hi)
        if hi < lo:
            return None
        return Interval(lo, hi)

    def to_list(self):
        return [self.lo, self.hi]


def normalize(intervals: Iterable[Interval]) -> list[Interval]:
    """Sort, drop null intervals and merge overlapping or touching ones."""
    items = sorted(iv for iv in intervals if iv.length > 0)
    out: list[Interval] = []
    for iv in items:
        if out and iv.lo <= out[-1].hi:
            if iv.hi > out[-1].hi:
                out[-1] = Interval(out[-1].lo, iv.hi)
        else:
            out.append(iv)
    return out


def total_length(intervals: Iterable[Interval]) -> float:
    return math.fsum(iv.length for iv in normalize(intervals))


def intersect_lists(a: Sequence[Interval], b: Sequence[Interval]) -> list[Interval]:
    a = normalize(a)
    b = normalize(b)
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i].lo, b[j].lo)
        hi = min(a[i].hi, b[j].hi)
        if hi > lo:
            out.append(Interval(lo, hi))
        if a[i].hi < b[j].hi:
            i += 1
        else:
            j += 1
    return out


def subtract_lists(a: Sequence[Interval], b: Sequence[Interval]) -> list[Interval]:
    """Set difference a minus b, up to endpoints."""
    out = []
    b = normalize(b)
    for iv in normalize(a):
        cur = iv.lo
        for h in b:
            if h.hi <= cur or h.lo >= iv.hi:
                continue
            if h.lo > cur:
                out.append(Interval(cur, h.lo))
            cur = max(cur, h.hi)
        if cur < iv.hi:
            out.append(Interval(cur, iv.hi))
    return out


@dataclass(frozen=True)
class AffineBranch:
    domain: Interval
    slope: float
    intercept: float

    def __post_init__(self):
        if not abs(self.slope) > 1:
            raise MapError(f"branch on {self.domain} is not expanding (slope {self.slope})")

    def __call__(self, x):
        return self.slope * x + self.intercept

    @property
    def image(self) -> Interval:
        y0 = self(self.domain.lo)
        y1 = self(self.domain.hi)
        return Interval(min(y0, y1), max(y0, y1))

    def inverse(self, target: Interval) -> Interval | None:
        """Part of the domain mapped into ``target``."""
        x0 = (target.lo - self.intercept) / self.slope
        x1 = (target.hi - self.intercept) / self.slope
        lo, hi = min(x0, x1), max(x0, x1)
        # endpoints that should coincide with the domain ends can miss by an ulp
        d = self.domain
        tol = 8 * np.finfo(float).eps * max(1.0, abs(d.lo), abs(d.hi))
        if abs(lo - d.lo) <= tol:
            lo = d.lo
        if abs(hi - d.hi) <= tol:
            hi = d.hi
        if abs(lo - d.hi) <= tol:
            lo = d.hi
        if abs(hi - d.lo) <= tol:
            hi = d.lo
        return Interval(lo, hi).intersect(d) if lo <= hi else None

    @classmethod
    def through(cls, lo, hi, y_lo, y_hi):
        """Affine branch on [lo, hi] sending lo to y_lo and hi to y_hi."""
        slope = (y_hi - y_lo) / (hi - lo)
        return cls(Interval(lo, hi), slope, y_lo - slope * lo)


@dataclass(frozen=True)
class PiecewiseAffineMap:
    """Expanding piecewise-affine map with boundary points b_0 < ... < b_m.

    Branch domains are half-open ``[lo, hi)`` except the last one, which is
    closed.  Points listed in ``fixed_points`` are sent to themselves
    regardless of the branch that contains them.
    """

    state_space: Interval
    branches: tuple
    boundary_points: tuple
    fixed_points: tuple = ()
    _los: np.ndarray = field(init=False, repr=False, compare=False)
    _slopes: np.ndarray = field(init=False, repr=False, compare=False)
    _intercepts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "boundary_points", tuple(float(b) for b in self.boundary_points))
        object.__setattr__(self, "fixed_points", tuple(float(p) for p in self.fixed_points))
        self._validate()
        los = np.array([br.domain.lo for br in self.branches])
        slopes = np.array([br.slope for br in self.branches])
        icpt = np.array([br.intercept for br in self.branches])
        for name, arr in (("_los", los), ("_slopes", slopes), ("_intercepts", icpt)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def _validate(self):
        ss = self.state_space
        if not self.branches:
            raise MapError("map needs at least one branch")
        if self.branches[0].domain.lo != ss.lo or self.branches[-1].domain.hi != ss.hi:
            raise MapError("branch domains do not cover the state space")
        for left, right in zip(self.branches, self.branches[1:]):
            if left.domain.hi != right.domain.lo:
                raise MapError(f"branch domains {left.domain} and {right.domain} are not contiguous")
        for br in self.branches:
            if br.domain.length <= 0:
                raise MapError(f"empty branch domain {br.domain}")
            im = br.image
            tol = 1e-12 * max(1.0, ss.length)
            if im.lo < ss.lo - tol or im.hi > ss.hi + tol:
                raise MapError(f"branch on {br.domain} leaves the state space (image {im})")
        b = self.boundary_points
        if len(b) < 2 or b[0] != ss.lo or b[-1] != ss.hi or any(x >= y for x, y in zip(b, b[1:])):
            raise MapError("boundary points must increase from state_space.lo to state_space.hi")
        ends = {br.domain.lo for br in self.branches} | {ss.hi}
        missing = [x for x in b if x not in ends]
        if missing:
            raise MapError(f"boundary points {missing} are not branch endpoints")

    # -- structure -------------------------------------------------------

    @property
    def m(self) -> int:
        return len(self.boundary_points) - 1

    def state_interval(self, j: int) -> Interval:
        self._check_state(j)
        return Interval(self.boundary_points[j], self.boundary_points[j + 1])

    @property
    def expansion(self) -> float:
        """Lambda = min |slope|."""
        return float(np.min(np.abs(self._slopes)))

    @property
    def branch_endpoints(self) -> list[float]:
        return [br.domain.lo for br in self.branches] + [self.state_space.hi]

    def _check_state(self, j):
        if not (isinstance(j, (int, np.integer)) and 0 <= j < self.m):
            raise MapError(f"invalid state index {j!r} for a map with {self.m} states")

    # -- evaluation ------------------------------------------------------

    def branch_index(self, x: float) -> int:
        if not self.state_space.contains(x):
            raise MapError(f"{x} is outside the state space {self.state_space}")
        i = bisect.bisect_right(self._los, x) - 1
        return min(max(i, 0), len(self.branches) - 1)

    def __call__(self, x: float) -> float:
        if x in self.fixed_points:
            if not self.state_space.contains(x):
                raise MapError(f"{x} is outside the state space {self.state_space}")
            return x
        br = self.branches[self.branch_index(x)]
        return min(max(br(x), self.state_space.lo), self.state_space.hi)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Vectorized evaluation; no range checking."""
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self._los, x, side="right") - 1, 0, len(self.branches) - 1)
        y = self._slopes[idx] * x + self._intercepts[idx]
        for p in self.fixed_points:
            y = np.where(x == p, p, y)
        return np.clip(y, self.state_space.lo, self.state_space.hi)

    def label(self, x):
        """State index z(x); a point on an interior boundary goes to the left well."""
        inner = np.asarray(self.boundary_points[1:-1])
        return np.searchsorted(inner, x, side="left")

    # -- preimages and holes ----------------------------------------------

    def preimage(self, target: Interval) -> list[Interval]:
        """Exact T^{-1}(target) as disjoint intervals, one piece per branch at most."""
        out = []
        for br in self.branches:
            piece = br.inverse(target)
            if piece is not None and piece.length > 0:
                out.append(piece)
        return out

    def preimage_list(self, targets: Sequence[Interval]) -> list[Interval]:
        pieces = []
        for t in normalize(targets):
            pieces.extend(self.preimage(t))
        return normalize(pieces)

    def holes(self, i: int, j: int) -> list[Interval]:
        """H_{i,j} = I_i intersected with T^{-1}(I_j), for i != j."""
        self._check_state(i)
        self._check_state(j)
        if i == j:
            raise MapError("holes are only defined between distinct states")
        Ii = self.state_interval(i)
        out = []
        for piece in self.preimage(self.state_interval(j)):
            cut = piece.intersect(Ii)
            if cut is not None and cut.length > 0:
                out.append(cut)
        return out

    def escape_set(self, j: int) -> list[Interval]:
        """H_j: union of the holes leading out of state j."""
        pieces = []
        for k in range(self.m):
            if k != j:
                pieces.extend(self.holes(j, k))
        return normalize(pieces)

    def survivor_set(self, j: int) -> list[Interval]:
        return subtract_lists([self.state_interval(j)], self.escape_set(j))

    def hole_measure(self, i: int, j: int, density=None) -> float:
        """mu_i(H_{i,j}).

        With ``density=None`` the invariant density of state i is taken to be
        uniform, which is exact for the built-in families.  Otherwise
        ``density`` is a :class:`metastable.ulam.DensityVector` (or anything
        with an ``integrate(intervals)`` method).
        """
        hs = self.holes(i, j)
        if density is None:
            return total_length(hs) / self.state_interval(i).length
        return density.integrate(hs)

    def alignment_points(self) -> list[float]:
        """Branch endpoints, boundary points and hole endpoints."""
        pts = set(self.branch_endpoints) | set(self.boundary_points)
        for j in range(self.m):
            for h in self.escape_set(j):
                pts.update((h.lo, h.hi))
        return sorted(pts)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "family": "custom",
            "state_space": self.state_space.to_list(),
            "boundary_points": list(self.boundary_points),
            "fixed_points": list(self.fixed_points),
            "branches": [
                {"domain": br.domain.to_list(), "slope": br.slope, "intercept": br.intercept}
                for br in self.branches
            ],
        }


@dataclass(frozen=True)
class PairedTentParams:
    """Hole-size parameters of the paired tent.

    ``b`` sets the leak from I_L to I_R and ``a`` the leak back.  Values
    above 1 are allowed as long as eps*a and eps*b stay at most 1 when the
    map is built.
    """

    a: float
    b: float

    def __post_init__(self):
        for name in ("a", "b"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise MapError(f"paired tent parameter {name}={v} must be positive")


def paired_tent_build(params: PairedTentParams, eps: float) -> PiecewiseAffineMap:
    """Paired tent map T_{eps*a, eps*b} on [-1, 1].

    Four affine branches plus the isolated fixed point 0.  I_L = [-1, 0]
    leaks into I_R near -1/2 (controlled by b) and I_R leaks into I_L near
    1/2 (controlled by a).
    """
    if eps < 0:
        raise MapError("eps must be nonnegative")
    A = eps * params.a
    B = eps * params.b
    if A > 1 or B > 1:
        raise MapError(f"eps*a={A} or eps*b={B} exceeds 1")
    sb = 2.0 * (1.0 + B)
    sa = 2.0 * (1.0 + A)
    branches = (
        AffineBranch(Interval(-1.0, -0.5), sb, sb - 1.0),
        AffineBranch(Interval(-0.5, 0.0), -sb, -1.0),
        AffineBranch(Interval(0.0, 0.5), -sa, 1.0),
        AffineBranch(Interval(0.5, 1.0), sa, 1.0 - sa),
    )
    return PiecewiseAffineMap(Interval(-1.0, 1.0), branches, (-1.0, 0.0, 1.0), fixed_points=(0.0,))


@dataclass(frozen=True)
class MWellSpec:
    """m unit wells on [0, m] with neighbour-only hole prescriptions.

    ``hole_lengths[i][j]`` is beta_{i,j}: the hole from well i to well j has
    Lebesgue (and mu_i) measure eps * beta_{i,j} * symbol_scale.
    ``well_slope`` is the number of full branches per well.
    """

    m: int
    hole_lengths: tuple
    well_slope: int = 2

    def __post_init__(self):
        beta = np.asarray(self.hole_lengths, dtype=float)
        if self.m < 2:
            raise MapError("an m-well map needs m >= 2")
        if beta.shape != (self.m, self.m):
            raise MapError(f"hole_lengths must be {self.m}x{self.m}")
        if np.any(beta < 0):
            raise MapError("hole lengths must be nonnegative")
        for i in range(self.m):
            for j in range(self.m):
                if abs(i - j) != 1 and beta[i, j] != 0:
                    raise MapError(f"non-neighbour hole ({i}, {j}) has nonzero length")
        if int(self.well_slope) != self.well_slope or self.well_slope < 2:
            raise MapError("well_slope must be an integer number of full branches >= 2")
        object.__setattr__(self, "hole_lengths", tuple(tuple(float(v) for v in row) for row in beta))
        object.__setattr__(self, "well_slope", int(self.well_slope))

    @property
    def beta(self) -> np.ndarray:
        return np.array(self.hole_lengths)


def mwell_build(spec: MWellSpec, eps: float, symbol_scale: float = 1.0) -> PiecewiseAffineMap:
    """Synthetic m-state testbed.

    Well j is [j, j+1].  Its non-hole part carries ``well_slope`` increasing
    full branches (so Lebesgue is invariant and each well boundary is fixed);
    the holes to the left and right neighbours sit in the middle of the well,
    and each is sent affinely onto the whole neighbouring well.
    """
    if eps < 0 or symbol_scale <= 0:
        raise MapError("need eps >= 0 and symbol_scale > 0")
    m, k = spec.m, spec.well_slope
    beta = spec.beta
    branches = []
    for j in range(m):
        left = eps * symbol_scale * beta[j, j - 1] if j > 0 else 0.0
        right = eps * symbol_scale * beta[j, j + 1] if j < m - 1 else 0.0
        if left + right >= 1:
            raise MapError(f"holes of well {j} (total {left + right}) exceed the well length")
        w = (1.0 - left - right) / k
        cuts = [float(j)]
        kinds = []
        n_before = (k + 1) // 2
        for _ in range(n_before):
            cuts.append(cuts[-1] + w)
            kinds.append("full")
        for h, target in ((left, j - 1), (right, j + 1)):
            if h > 0:
                cuts.append(cuts[-1] + h)
                kinds.append(target)
        for _ in range(k - n_before):
            cuts.append(cuts[-1] + w)
            kinds.append("full")
        cuts[-1] = float(j + 1)
        for lo, hi, kind in zip(cuts, cuts[1:], kinds):
            if hi <= lo:  # hole below float resolution
                continue
            if kind == "full":
                branches.append(AffineBranch.through(lo, hi, float(j), float(j + 1)))
            else:
                branches.append(AffineBranch.through(lo, hi, float(kind), float(kind + 1)))
    return PiecewiseAffineMap(Interval(0.0, float(m)), tuple(branches), tuple(float(i) for i in range(m + 1)))


# -- JSON --------------------------------------------------------------------


def map_from_dict(d: dict) -> PiecewiseAffineMap:
    """Build a map from ``{family, params, eps}`` or a custom branch list."""
    family = d.get("family")
    if family == "paired_tent":
        p = d["params"]
        return paired_tent_build(PairedTentParams(p["a"], p["b"]), d.get("eps", 0.0))
    if family == "m_well":
        p = d["params"]
        spec = MWellSpec(len(p["beta"]), p["beta"], p.get("well_slope", 2))
        return mwell_build(spec, d.get("eps", 0.0), p.get("symbol_scale", 1.0))
    if family == "custom":
        branches = tuple(
            AffineBranch(Interval(*b["domain"]), b["slope"], b["intercept"]) for b in d["branches"]
        )
        ss = d.get("state_space", [branches[0].domain.lo, branches[-1].domain.hi])
        return PiecewiseAffineMap(
            Interval(*ss), branches, tuple(d["boundary_points"]), tuple(d.get("fixed_points", ()))
        )
    raise MapError(f"unknown map family {family!r}")


def map_to_json(tmap: PiecewiseAffineMap) -> str:
    return json.dumps(tmap.to_dict())


def map_from_json(text: str) -> PiecewiseAffineMap:
    return map_from_dict(json.loads(text))
