"""
Ulam discretizations of closed and open transfer operators.

Grids are aligned to every branch endpoint, boundary point and hole
endpoint, so each cell lies inside a single affine branch and is either
entirely inside a hole or entirely outside.  Matrix entries are then exact
ratios of interval lengths:

    P[k, l] = Leb(cell_k & D & T^{-1} cell_l) / Leb(cell_k)

with D the whole state space (closed) or I_j minus its holes (open).
Densities are pushed with ``mass -> P^T mass``.
"""

from __future__ import annotations

import bisect
import json
import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .maps import Interval, PiecewiseAffineMap, normalize

DEFAULT_CELLS = 2**14
K_CAP = 100_000


class UlamError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Pull-back iteration did not stabilise."""

    def __init__(self, msg, ratio_gap):
        super().__init__(msg)
        self.ratio_gap = ratio_gap


# -- grids -------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    edges: np.ndarray = field(repr=False)

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
            raise UlamError("grid edges must be strictly increasing")
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @classmethod
    def aligned(cls, state_space: Interval, n_cells: int, points: Sequence[float] = (), rel_tol: float = 1e-3):
        """Uniform grid with ``points`` inserted exactly.

        Uniform edges closer than ``rel_tol`` cells to an inserted point are
        dropped so no sliver cells appear.
        """
        lo, hi = state_space.lo, state_space.hi
        h = (hi - lo) / n_cells
        uni = lo + (hi - lo) * np.arange(n_cells + 1) / n_cells
        pts = np.unique(np.clip(np.asarray(list(points) + [lo, hi], dtype=float), lo, hi))
        idx = np.clip(np.searchsorted(pts, uni), 1, len(pts) - 1)
        near = np.minimum(np.abs(uni - pts[idx - 1]), np.abs(uni - pts[idx]))
        keep = uni[near > rel_tol * h]
        return cls(np.union1d(keep, pts))

    @classmethod
    def for_maps(cls, maps: Sequence[PiecewiseAffineMap], n_cells: int = DEFAULT_CELLS, extra=()):
        pts = set(extra)
        for t in maps:
            pts.update(t.alignment_points())
        return cls.aligned(maps[0].state_space, n_cells, sorted(pts))

    @property
    def n(self) -> int:
        return self.edges.size - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def has_edges(self, points) -> bool:
        points = np.asarray(list(points), dtype=float)
        i = np.clip(np.searchsorted(self.edges, points), 0, self.n)
        return bool(np.all(self.edges[i] == points))

    def cell_mask(self, intervals: Sequence[Interval]) -> np.ndarray:
        """Cells whose midpoint lies in the union of ``intervals``."""
        mid = self.midpoints
        out = np.zeros(self.n, dtype=bool)
        for iv in intervals:
            out |= (mid > iv.lo) & (mid < iv.hi)
        return out

    def overlap_matrix(self, intervals: Sequence[Interval]) -> np.ndarray:
        """Leb(cell_k & union of intervals) for each cell."""
        out = np.zeros(self.n)
        e = self.edges
        for iv in normalize(intervals):
            out += np.clip(np.minimum(e[1:], iv.hi) - np.maximum(e[:-1], iv.lo), 0, None)
        return out


def _spread(lo, hi, edges):
    """COO triples (source, cell, overlap) for intervals [lo_i, hi_i] against cells."""
    n = edges.size - 1
    l0 = np.clip(np.searchsorted(edges, lo, side="right") - 1, 0, n - 1)
    l1 = np.clip(np.searchsorted(edges, hi, side="left") - 1, 0, n - 1)
    l1 = np.maximum(l1, l0)
    span = l1 - l0 + 1
    src = np.repeat(np.arange(lo.size), span)
    start = np.repeat(np.cumsum(span) - span, span)
    cols = np.repeat(l0, span) + (np.arange(src.size) - start)
    ov = np.minimum(hi[src], edges[cols + 1]) - np.maximum(lo[src], edges[cols])
    keep = ov > 0
    return src[keep], cols[keep], ov[keep]


# -- densities ------------------------------------------------------------------


@dataclass(frozen=True)
class DensityVector:
    """Piecewise-constant density: ``weights[k]`` is the value on cell k."""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.grid.n,):
            raise UlamError("density needs one weight per cell")
        if np.any(w < 0):
            raise UlamError("density weights must be nonnegative")
        object.__setattr__(self, "weights", w)

    @property
    def cell_masses(self) -> np.ndarray:
        return self.weights * self.grid.lengths

    @property
    def mass(self) -> float:
        return math.fsum(self.cell_masses)

    def normalized(self) -> "DensityVector":
        return DensityVector(self.grid, self.weights / self.mass)

    def integrate(self, intervals: Sequence[Interval]) -> float:
        return math.fsum(self.weights * self.grid.overlap_matrix(intervals))

    @classmethod
    def from_masses(cls, grid: Grid, masses) -> "DensityVector":
        return cls(grid, np.clip(np.asarray(masses) / grid.lengths, 0, None))

    @classmethod
    def uniform(cls, grid: Grid, support: Sequence[Interval]) -> "DensityVector":
        w = grid.overlap_matrix(support) / grid.lengths
        return cls(grid, w / math.fsum(w * grid.lengths))


def l1_distance(f: DensityVector, g: DensityVector) -> float:
    return float(np.sum(np.abs(f.weights - g.weights) * f.grid.lengths))


def max_deviation_on(f: DensityVector, g: DensityVector, intervals: Sequence[Interval]) -> float:
    """max |f - g| over the cells inside ``intervals`` (0 if none)."""
    mask = f.grid.cell_mask(intervals)
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(f.weights - g.weights)[mask]))


# -- operators -------------------------------------------------------------------


@dataclass(frozen=True)
class UlamOperator:
    grid: Grid
    matrix: sp.csr_matrix = field(repr=False)
    kind: str = "closed"
    state: int | None = None
    fiber: int | None = None
    active: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    @property
    def deficiency(self) -> float:
        """Lebesgue mass lost in one step starting from Lebesgue on the active cells."""
        return math.fsum((1.0 - self.row_sums) * self.grid.lengths * self._active())

    def _active(self):
        return 1.0 if self.active is None else self.active.astype(float)

    def push(self, masses: np.ndarray) -> np.ndarray:
        """Cell masses after one step."""
        return self.matrix.T @ masses

    def push_density(self, f: DensityVector) -> DensityVector:
        return DensityVector.from_masses(self.grid, self.push(f.cell_masses))

    def pull(self, g: np.ndarray) -> np.ndarray:
        """Dual action on cell-wise function values."""
        return self.matrix @ g

    def header(self) -> dict:
        return {"kind": self.kind, "state": self.state, "fiber": self.fiber,
                "n_cells": self.n, "edges": [float(x) for x in self.grid.edges]}

    def to_coo_text(self) -> str:
        """JSON header line followed by one ``row col value`` line per entry."""
        coo = self.matrix.tocoo()
        lines = [json.dumps(self.header())]
        lines += [f"{r} {c} {v:.17g}" for r, c, v in zip(coo.row, coo.col, coo.data)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_coo_text(cls, text: str) -> "UlamOperator":
        first, _, rest = text.partition("\n")
        h = json.loads(first)
        grid = Grid(np.array(h["edges"]))
        data = np.loadtxt(rest.splitlines(), ndmin=2) if rest.strip() else np.zeros((0, 3))
        mat = sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(grid.n, grid.n))
        return cls(grid, mat, h["kind"], h["state"], h["fiber"])


def _check_aligned(tmap: PiecewiseAffineMap, grid: Grid, extra=()):
    pts = list(tmap.branch_endpoints) + list(tmap.boundary_points) + list(extra)
    if not grid.has_edges(pts):
        raise UlamError("grid is not aligned to the map's branch, boundary and hole endpoints")


def _build(tmap: PiecewiseAffineMap, grid: Grid, rows_mask: np.ndarray) -> sp.csr_matrix:
    e = grid.edges
    mid = grid.midpoints
    bidx = np.clip(np.searchsorted(tmap._los, mid, side="right") - 1, 0, len(tmap.branches) - 1)
    s = tmap._slopes[bidx]
    c = tmap._intercepts[bidx]
    y0 = s * e[:-1] + c
    y1 = s * e[1:] + c
    ss = tmap.state_space
    lo = np.clip(np.minimum(y0, y1), ss.lo, ss.hi)
    hi = np.clip(np.maximum(y0, y1), ss.lo, ss.hi)
    rows = np.flatnonzero(rows_mask)
    src, cols, ov = _spread(lo[rows], hi[rows], e)
    r = rows[src]
    vals = ov / (hi[r] - lo[r])
    return sp.csr_matrix((vals, (r, cols)), shape=(grid.n, grid.n))


def build_closed(tmap: PiecewiseAffineMap, grid: Grid, fiber: int | None = None) -> UlamOperator:
    """Row-stochastic Ulam matrix of the closed transfer operator."""
    _check_aligned(tmap, grid)
    return UlamOperator(grid, _build(tmap, grid, np.ones(grid.n, dtype=bool)), "closed", None, fiber)


def build_open(tmap: PiecewiseAffineMap, j: int, grid: Grid, fiber: int | None = None) -> UlamOperator:
    """Ulam matrix of f -> L(1_{I_j minus H_j} f); rows outside I_j or in a hole vanish."""
    holes = tmap.escape_set(j)
    _check_aligned(tmap, grid, [p for h in holes for p in (h.lo, h.hi)])
    mask = grid.cell_mask(tmap.survivor_set(j))
    well = grid.cell_mask([tmap.state_interval(j)])
    return UlamOperator(grid, _build(tmap, grid, mask), "open", j, fiber, well)


def compose(operators: Sequence[UlamOperator], grid: Grid | None = None) -> UlamOperator:
    """Operator of applying ``operators[0]`` first, then ``operators[1]``, and so on."""
    if not operators:
        if grid is None:
            raise UlamError("an empty composition needs a grid")
        return UlamOperator(grid, sp.identity(grid.n, format="csr"), "composed")
    g = operators[0].grid
    mat = operators[0].matrix
    for op in operators[1:]:
        if op.grid.n != g.n or not np.array_equal(op.grid.edges, g.edges):
            raise UlamError("operators live on different grids")
        mat = (mat @ op.matrix).tocsr()
    if len(operators) == 1:
        return operators[0]
    kinds = {op.kind for op in operators}
    states = {op.state for op in operators}
    return UlamOperator(g, mat, "composed" if len(kinds) > 1 else kinds.pop(),
                        states.pop() if len(states) == 1 else None, operators[0].fiber)


# -- exact rational transport (used for the composition identity) ----------------
#
# Branch coefficients and grid edges are floats, hence exact dyadic rationals;
# doing the transport in Fractions makes both sides of the identity exact.


def _rational_branches(tmap: PiecewiseAffineMap):
    return [(Fraction(br.domain.lo), Fraction(br.domain.hi), Fraction(br.slope), Fraction(br.intercept))
            for br in tmap.branches]


def _rational_preimage(branches, targets):
    out = []
    for lo, hi, s, c in branches:
        for a, b in targets:
            x0, x1 = (a - c) / s, (b - c) / s
            x0, x1 = max(min(x0, x1), lo), min(max(x0, x1), hi)
            if x1 > x0:
                out.append((x0, x1))
    return _rational_union(out)


def _rational_union(ivs):
    out = []
    for a, b in sorted(ivs):
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def _rational_intersect(xs, ys):
    out = []
    for a, b in xs:
        for c, d in ys:
            lo, hi = max(a, c), min(b, d)
            if hi > lo:
                out.append((lo, hi))
    return _rational_union(out)


def _push_pieces(branches, pieces):
    """Push-forward of a piecewise-constant density given as (lo, hi, value)."""
    out = []
    for lo, hi, v in pieces:
        for blo, bhi, s, c in branches:
            a, b = max(lo, blo), min(hi, bhi)
            if b <= a:
                continue
            ya, yb = s * a + c, s * b + c
            out.append((min(ya, yb), max(ya, yb), v / abs(s)))
    return out


def _restrict_pieces(pieces, intervals):
    out = []
    for lo, hi, v in pieces:
        for c, d in intervals:
            a, b = max(lo, c), min(hi, d)
            if b > a:
                out.append((a, b, v))
    return out


def _project(pieces, edges) -> dict:
    """Mass of the step density in every cell it touches."""
    out = {}
    for lo, hi, v in pieces:
        k = max(bisect.bisect_right(edges, lo) - 1, 0)
        while k < len(edges) - 1 and edges[k] < hi:
            ov = min(hi, edges[k + 1]) - max(lo, edges[k])
            if ov > 0:
                out[k] = out.get(k, 0) + ov * v
            k += 1
    return out


def _well(tmap, j):
    iv = tmap.state_interval(j)
    return [(Fraction(iv.lo), Fraction(iv.hi))]


def survivor_set(maps: Sequence[PiecewiseAffineMap], j: int) -> list[Interval]:
    """Points of I_j whose first len(maps) iterates stay in I_j (never enter a hole)."""
    return [Interval(float(a), float(b)) for a, b in _rational_survivor(maps, j)]


def _rational_survivor(maps, j):
    well = _well(maps[0], j)
    good = well
    for t in reversed(maps):
        good = _rational_intersect(well, _rational_preimage(_rational_branches(t), good))
    return good


def open_composition_matrices(maps: Sequence[PiecewiseAffineMap], j: int, grid: Grid):
    """The n-step open operator computed two ways, projected on ``grid``.

    Route one cuts to I_j minus the holes before every step; route two cuts
    once to the n-step survivor set and then applies the closed maps.  Entry
    [k, l] is the mass reaching cell l from unit density on cell k, divided
    by the length of cell k.  Returns (open_route, closed_route, max_gap),
    where max_gap is evaluated in exact arithmetic before rounding.
    """
    branches = [_rational_branches(t) for t in maps]
    keep = [_rational_intersect(_well(t, j), _rational_preimage(b, _well(t, j))) for t, b in zip(maps, branches)]
    good = _rational_survivor(maps, j)
    e = [Fraction(x) for x in grid.edges]
    A = np.zeros((grid.n, grid.n))
    B = np.zeros((grid.n, grid.n))
    gap = Fraction(0)
    for k in range(grid.n):
        cell = [(e[k], e[k + 1], Fraction(1))]
        p = cell
        for br, kp in zip(branches, keep):
            p = _push_pieces(br, _restrict_pieces(p, kp))
        q = _restrict_pieces(cell, good)
        for br in branches:
            q = _push_pieces(br, q)
        width = e[k + 1] - e[k]
        pa, pb = _project(p, e), _project(q, e)
        for l in set(pa) | set(pb):
            va, vb = pa.get(l, 0) / width, pb.get(l, 0) / width
            gap = max(gap, abs(va - vb))
            A[k, l], B[k, l] = float(va), float(vb)
    return A, B, float(gap)


def open_composition_check(env, path, j: int, eps: float, n: int, n_cells: int = 2**10, k0: int = 0):
    """Max entrywise gap between the open-operator product and the closed
    product applied after cutting to the n-step survivor set.

    Both sides are computed by exact interval transport and projected on a
    grid of about ``n_cells`` cells aligned to all survivor-set endpoints.
    Returns (discrepancy, survivor_length).
    """
    if n < 1:
        raise UlamError("n must be >= 1")
    maps = [env.fiber_map(path, k, eps) for k in range(k0, k0 + n)]
    good = _rational_survivor(maps, j)
    extra = [float(p) for iv in good for p in iv]
    grid = Grid.for_maps(maps, n_cells, extra)
    _, _, gap = open_composition_matrices(maps, j, grid)
    return gap, float(sum(b - a for a, b in good))


# -- cocycle pushes and spectral data ------------------------------------------------


class OperatorBank:
    """Per-symbol Ulam matrices for one environment, eps, grid and kind."""

    def __init__(self, env, eps: float, grid: Grid | None = None, j: int | None = None,
                 n_cells: int = DEFAULT_CELLS):
        self.env = env
        self.eps = float(eps)
        self.j = j
        maps = env.maps(eps)
        self.grid = grid if grid is not None else Grid.for_maps(maps, n_cells)
        if j is None:
            self.ops = [build_closed(t, self.grid) for t in maps]
        else:
            self.ops = [build_open(t, j, self.grid) for t in maps]
        self.PT = [op.matrix.T.tocsr() for op in self.ops]
        self.P = [op.matrix for op in self.ops]

    def support(self) -> list[Interval]:
        t = self.env.symbol_map(0, self.eps)
        return [t.state_space] if self.j is None else [t.state_interval(self.j)]

    def uniform_masses(self) -> np.ndarray:
        return DensityVector.uniform(self.grid, self.support()).cell_masses

    def tilted_masses(self) -> np.ndarray:
        sup = self.support()[0]
        x = self.grid.midpoints
        w = self.grid.overlap_matrix(self.support()) * (1.0 + 0.9 * (x - sup.lo) / sup.length)
        return w / w.sum()

    def push(self, symbols, masses: np.ndarray, normalize_each: bool = True):
        """Push along symbols; returns final masses and the per-step mass ratios."""
        ratios = np.empty(len(symbols))
        for i, s in enumerate(symbols):
            new = self.PT[s] @ masses
            tot = new.sum(axis=0)
            base = masses.sum(axis=0)
            ratios[i] = np.atleast_1d(tot / base)[0]
            masses = new / tot if normalize_each else new
        return masses, ratios


@dataclass
class SpectralTriple:
    lambda_seq: np.ndarray
    phi: DensityVector
    nu: np.ndarray
    residual_decay: float
    K: int
    ratio_gap: float
    state: int | None = None


def _fit_decay(dist: np.ndarray) -> float:
    d = np.asarray(dist)
    ok = np.flatnonzero(d > 1e-13)
    if ok.size < 3:
        return 0.0
    y = np.log(d[ok])
    slope = np.polyfit(ok.astype(float), y, 1)[0]
    return float(min(math.exp(slope), 1.0 + 1e-12)) if np.isfinite(slope) else 1.0


def default_depth(eps: float) -> int:
    return K_CAP if eps <= 0 else min(int(math.ceil(40.0 / eps)), K_CAP)


def equivariant_triple(env, path, j, eps: float, grid: Grid | None = None, K: int | None = None,
                       n_forward: int = 1, tol: float = 1e-10, bank: OperatorBank | None = None,
                       nu_depth: int | None = None) -> SpectralTriple:
    """Leading equivariant data of the open (``j`` an int) or closed (``j=None``) cocycle.

    The uniform density on I_j is pushed from fiber -K to fiber 0 together
    with a tilted density; the depth doubles until their per-step mass
    ratios agree to ``tol`` relatively.  ``lambda_seq`` holds the ratios of
    fibers 0, ..., n_forward-1, ``phi`` the density arriving at fiber 0 and
    ``nu`` the cell-wise values of the pulled-back functional at fiber 0.
    """
    bank = bank or OperatorBank(env, eps, grid, j)
    K = default_depth(eps) if K is None else int(K)
    while True:
        p = path.extend(-K, max(n_forward, K if nu_depth is None else nu_depth, 1))
        syms = p.window(-K, 0)
        start = np.column_stack([bank.uniform_masses(), bank.tilted_masses()])
        dist = np.empty(K)
        masses = start
        last = np.ones(2)
        for i, s in enumerate(syms):
            new = bank.PT[s] @ masses
            tot = new.sum(axis=0)
            if np.any(tot <= 0):
                raise ConvergenceError("all mass escaped during pull-back", np.inf)
            last = tot / masses.sum(axis=0)
            masses = new / tot
            dist[i] = np.abs(masses[:, 0] - masses[:, 1]).sum()
        gap = abs(last[0] - last[1]) / last[0] if K else 0.0
        if gap < tol or K == 0:
            break
        if K >= K_CAP:
            raise ConvergenceError(f"no stabilisation within K={K}", gap)
        K = min(2 * K, K_CAP)
    phi_mass = masses[:, 0]
    phi = DensityVector.from_masses(bank.grid, phi_mass).normalized()
    _, lam = bank.push(p.window(0, n_forward), phi.cell_masses.copy())
    nu_depth = K if nu_depth is None else nu_depth
    g = np.asarray(bank.grid.overlap_matrix(bank.support()) > 0, dtype=float)
    for s in p.window(0, nu_depth)[::-1]:
        g = bank.P[s] @ g
        mx = g.max()
        if mx <= 0:
            raise ConvergenceError("functional vanished during backward pass", np.inf)
        g = g / mx
    g = g / np.sum(g * phi.cell_masses)
    return SpectralTriple(lam, phi, g, _fit_decay(dist), K, gap, j)


def lambda_window_product(env, path, j: int, eps: float, t: float, grid: Grid | None = None,
                          K: int | None = None, bank: OperatorBank | None = None) -> float:
    """Product of the per-fiber multipliers over floor(t/eps) fibers."""
    if t <= 0:
        return 1.0
    n = int(math.floor(t / eps + 1e-9))
    if n == 0:
        return 1.0
    tri = equivariant_triple(env, path, j, eps, grid, K, n_forward=n, bank=bank, nu_depth=1)
    return float(np.exp(np.sum(np.log(tri.lambda_seq))))


def unperturbed_density(env, j: int, grid: Grid | None = None, n_cells: int = DEFAULT_CELLS, K: int = 200):
    """phi_j: invariant density of the unperturbed map on I_j."""
    bank = OperatorBank(env, 0.0, grid, j, n_cells)
    path = env.path(-K, 1)
    return equivariant_triple(env, path, j, 0.0, K=K, bank=bank, nu_depth=1).phi


def nu_deviation(triple: SpectralTriple, well: Interval) -> float:
    """max over x in the well of |int_{lo}^{x} (nu - 1) dLeb|.

    A dual-norm style distance to Lebesgue on the well: it tests nu against
    indicators of initial segments, so the zero weights on hole cells and
    their preimages only count through their total length.
    """
    g = triple.phi.grid
    mask = g.cell_mask([well])
    diff = (triple.nu[mask] - 1.0) * g.lengths[mask]
    return float(np.max(np.abs(np.cumsum(diff)))) if diff.size else 0.0
