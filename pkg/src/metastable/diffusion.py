"""
Observables, fibrewise centring and quenched variance estimates.

Two independent estimators of the variance of Birkhoff sums are provided:
a trajectory estimator (sample variance of S_n / n over initial points,
averaged over omega replicas) and an operator estimator (autocovariance
series evaluated with Ulam matrices of the closed cocycle).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .environment import Environment, hash_uniforms
from .markov import JumpOracle, stationary, generator, variance_limit
from .ulam import DEFAULT_CELLS, Grid, OperatorBank, default_depth

_ROUND = 8 * np.finfo(float).eps


class DiffusionError(ValueError):
    pass


# -- observables --------------------------------------------------------------------


@dataclass(frozen=True)
class Observable:
    """Per-symbol piecewise cubic on a shared set of breakpoints.

    ``coeffs[s, i]`` holds (c0, c1, c2, c3) of the polynomial used on
    ``[breakpoints[i], breakpoints[i+1])`` for symbol s.
    """

    breakpoints: np.ndarray
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim == 2:
            c = c[None]
        if b.ndim != 1 or np.any(np.diff(b) <= 0):
            raise DiffusionError("breakpoints must increase")
        if c.ndim != 3 or c.shape[1] != b.size - 1 or c.shape[2] > 4:
            raise DiffusionError("coeffs must have shape (symbols, pieces, <=4)")
        c = np.pad(c, ((0, 0), (0, 0), (0, 4 - c.shape[2])))
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def piecewise_constant(cls, breakpoints, values) -> "Observable":
        v = np.atleast_2d(np.asarray(values, dtype=float))
        return cls(breakpoints, v[..., None])

    @property
    def n_symbols(self) -> int:
        return self.coeffs.shape[0]

    def _sym(self, sym):
        return np.minimum(sym, self.n_symbols - 1)

    def __call__(self, x, sym=0):
        x = np.asarray(x, dtype=float)
        b = self.breakpoints
        piece = np.clip(np.searchsorted(b, x, side="right") - 1, 0, b.size - 2)
        c = self.coeffs[self._sym(np.asarray(sym)), piece]
        return ((c[..., 3] * x + c[..., 2]) * x + c[..., 1]) * x + c[..., 0]

    def _antideriv(self, coeffs, x):
        powers = np.stack([x, x**2 / 2, x**3 / 3, x**4 / 4], axis=-1)
        return np.sum(coeffs * powers, axis=-1)

    def cell_integrals(self, edges, sym: int = 0, power: int = 1) -> np.ndarray:
        """Exact int over [edges[k], edges[k+1]] of psi**power (power 1 or 2)."""
        edges = np.asarray(edges, dtype=float)
        b = self.breakpoints
        pts = np.union1d(edges, b[(b > edges[0]) & (b < edges[-1])])
        lo, hi = pts[:-1], pts[1:]
        # left endpoints are exact edges or breakpoints, unlike midpoints of tiny cells
        piece = np.clip(np.searchsorted(b, lo, side="right") - 1, 0, b.size - 2)
        c = self.coeffs[self._sym(sym), piece]
        if power == 1:
            vals = self._antideriv(c, hi) - self._antideriv(c, lo)
        elif power == 2:
            sq = np.zeros((c.shape[0], 7))
            for i in range(4):
                for j in range(4):
                    sq[:, i + j] += c[:, i] * c[:, j]
            k = np.arange(1, 8)
            vals = np.sum(sq / k * (hi[:, None] ** k - lo[:, None] ** k), axis=1)
        else:
            raise DiffusionError("power must be 1 or 2")
        cell = np.clip(np.searchsorted(edges, lo, side="right") - 1, 0, edges.size - 2)
        return np.bincount(cell, weights=vals, minlength=edges.size - 1)

    def integrate(self, lo: float, hi: float, sym: int = 0) -> float:
        return float(self.cell_integrals(np.array([lo, hi]), sym)[0])

    def sup_norm(self) -> float:
        """Exact sup |psi| (endpoints and interior critical points)."""
        best = 0.0
        for s in range(self.n_symbols):
            for i, (lo, hi) in enumerate(zip(self.breakpoints[:-1], self.breakpoints[1:])):
                xs = self._extremal_points(self.coeffs[s, i], lo, hi)
                best = max(best, float(np.max(np.abs(self(xs, s)))))
        return best

    def variation(self, sym: int = 0) -> float:
        """Total variation on the state space, including jumps at breakpoints."""
        tot = 0.0
        b = self.breakpoints
        prev_end = None
        for i, (lo, hi) in enumerate(zip(b[:-1], b[1:])):
            c = self.coeffs[sym, i]
            xs = self._extremal_points(c, lo, hi)
            ys = np.polynomial.polynomial.polyval(xs, c)
            tot += float(np.sum(np.abs(np.diff(ys))))
            if prev_end is not None:
                tot += abs(ys[0] - prev_end)
            prev_end = ys[-1]
        return tot

    @staticmethod
    def _extremal_points(c, lo, hi):
        d = np.polynomial.polynomial.polyder(c)
        xs = [lo, hi]
        if np.any(d != 0):
            r = np.polynomial.polynomial.polyroots(np.trim_zeros(d, "b")) if np.any(np.trim_zeros(d, "b")) else []
            xs += [float(z.real) for z in np.atleast_1d(r) if abs(z.imag) < 1e-14 and lo < z.real < hi]
        return np.sort(np.array(xs))

    def shifted(self, shifts) -> "Observable":
        """Subtract a constant per symbol."""
        shifts = np.broadcast_to(np.asarray(shifts, dtype=float), (self.n_symbols,))
        c = self.coeffs.copy()
        c[:, :, 0] -= shifts[:, None]
        return Observable(self.breakpoints, c)

    def scaled(self, factor: float) -> "Observable":
        return Observable(self.breakpoints, self.coeffs * factor)

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)


def two_state_observable(psi_left: float, psi_right: float, n_symbols: int = 1) -> Observable:
    """psi = psi_left on [-1, 0) and psi_right on [0, 1] for every symbol."""
    vals = np.tile([psi_left, psi_right], (n_symbols, 1))
    return Observable.piecewise_constant([-1.0, 0.0, 1.0], vals)


@dataclass
class PsiVector:
    values: np.ndarray
    q: np.ndarray

    @property
    def averaged(self) -> np.ndarray:
        return self.q @ self.values


def psi_vector(psi: Observable, env: Environment, phi_list=None) -> PsiVector:
    """Psi_omega(j) = int_{I_j} psi_omega phi_j for every symbol.

    ``phi_list=None`` uses uniform phi_j; otherwise one DensityVector per state.
    """
    t0 = env.symbol_map(0, 0.0)
    vals = np.zeros((env.alphabet.size, env.m))
    for s in range(env.alphabet.size):
        for j in range(env.m):
            iv = t0.state_interval(j)
            if phi_list is None:
                vals[s, j] = psi.integrate(iv.lo, iv.hi, s) / iv.length
            else:
                phi = phi_list[j]
                ci = psi.cell_integrals(phi.grid.edges, s)
                mask = phi.grid.cell_mask([iv])
                vals[s, j] = math.fsum(phi.weights[mask] * ci[mask])
    return PsiVector(vals, env.alphabet.q)


def center_fibrewise(psi: Observable, p: np.ndarray, env: Environment, phi_list=None) -> Observable:
    """Subtract c_omega = sum_j p_j Psi_omega(j) from every symbol's function."""
    if psi.n_symbols not in (1, env.alphabet.size):
        raise DiffusionError("observable has the wrong number of symbols")
    if psi.n_symbols == 1 and env.alphabet.size > 1:
        psi = Observable(psi.breakpoints, np.repeat(psi.coeffs, env.alphabet.size, axis=0))
    pv = psi_vector(psi, env, phi_list)
    c = pv.values @ np.asarray(p, dtype=float)
    scale = max(1.0, float(np.max(np.abs(psi.coeffs))))
    c = np.where(np.abs(c) <= _ROUND * scale, 0.0, c)
    if not np.any(c):
        return psi
    return psi.shifted(c)


@dataclass
class EpsCentering:
    """Per-fiber shifts mu_omega^eps(psi_omega) and the resulting residuals."""

    shifts: np.ndarray
    residuals: np.ndarray


def eps_center(psi: Observable, densities, symbols) -> EpsCentering:
    """Shift psi on each fiber k by its mean under ``densities[k]``."""
    shifts = np.empty(len(densities))
    res = np.empty(len(densities))
    for k, (phi, s) in enumerate(zip(densities, symbols)):
        ci = psi.cell_integrals(phi.grid.edges, s)
        mass = phi.mass
        shifts[k] = math.fsum(phi.weights * ci) / mass
        res[k] = math.fsum(phi.weights * (ci - shifts[k] * phi.grid.lengths))
    return EpsCentering(shifts, res)


# -- variance estimates ------------------------------------------------------------


@dataclass
class VarianceEstimate:
    eps: float
    sigma2: float
    route: str
    stderr: float
    n: int = 0
    replicas: int = 0
    n_max: int = 0
    tail_bound: float = 0.0
    theta: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def eps_sigma2(self) -> float:
        return self.eps * self.sigma2

    @property
    def error(self) -> float:
        """stderr plus truncation bound."""
        return self.stderr + self.tail_bound


def _spectral_gap(env: Environment) -> float:
    ev = np.linalg.eigvals(generator(env.beta_bar)).real
    return float(np.min(-ev[ev < -1e-12]))


def _exit_rate_min(env: Environment) -> float:
    return float(np.min(JumpOracle.from_beta(env.beta_bar).rates))


def _run_sums(env, psi, eps, seeds, n_inner, n, burn, x_seed):
    """Birkhoff sums over n steps after ``burn`` steps; one row per omega seed."""
    R = len(seeds)
    maps = env.maps(eps)
    ss = maps[0].state_space
    u = hash_uniforms(x_seed, np.arange(R * n_inner), stream=31)
    x = ss.lo + ss.length * u
    alpha = env.alphabet.size
    cdf = env.alphabet._cdf()
    uniq_seed = np.asarray(seeds, dtype=np.uint64)
    S = np.zeros(R * n_inner)
    comp = np.zeros(R * n_inner)
    for k in range(-burn, n):
        if alpha == 1:
            sym = 0
            x = maps[0].evaluate(x)
        else:
            # symbol of sigma^k omega for each replica, shared by its inner points
            usym = np.searchsorted(cdf, hash_uniforms(uniq_seed, np.full(R, k)), side="right")
            sym = np.repeat(usym, n_inner)
            new = np.empty_like(x)
            for s in range(alpha):
                sel = sym == s
                new[sel] = maps[s].evaluate(x[sel])
            x = new
        if k >= 0:
            # Kahan summation keeps long sums reproducible to the last bits
            y = psi(x, sym) - comp
            t = S + y
            comp = (t - S) - y
            S = t
    return S.reshape(R, n_inner)


def _replica_seeds(seed: int, R: int) -> np.ndarray:
    return (hash_uniforms(seed, np.arange(R), stream=17) * 2**53).astype(np.uint64)


def variance_trajectory(env: Environment, psi: Observable, eps: float, n: int, N: int,
                        n_inner: int = 4, seed: int | None = None, burn: int | None = None,
                        min_jumps: float = 20.0) -> VarianceEstimate:
    """Sigma^2 from sample variances of S_n over initial points, averaged over N omega replicas.

    The sample variance over points sharing a replica's omega removes the
    quenched mean of S_n, so the eps-dependent centring never has to be
    computed explicitly.
    """
    if psi.is_zero():
        return VarianceEstimate(eps, 0.0, "trajectory", 0.0, n, N)
    if eps <= 0:
        raise DiffusionError("eps must be positive")
    rate = _exit_rate_min(env)
    need = int(math.ceil(min_jumps / (eps * rate)))
    if n < need:
        raise DiffusionError(f"n={n} spans fewer than {min_jumps} expected jumps; need n >= {need}")
    if n_inner < 2:
        raise DiffusionError("need at least two initial points per replica")
    seed = env.seed if seed is None else int(seed)
    if burn is None:
        burn = int(math.ceil(10.0 / (eps * _spectral_gap(env))))
    S = _run_sums(env, psi, eps, _replica_seeds(seed, N), n_inner, n, burn, seed)
    per = S.var(axis=1, ddof=1) / n
    est = float(per.mean())
    # delete-one jackknife of the mean over replicas
    jk = (per.sum() - per) / (N - 1)
    se = float(math.sqrt((N - 1) / N * np.sum((jk - jk.mean()) ** 2)))
    return VarianceEstimate(eps, est, "trajectory", se, n, N, extra={"n_inner": n_inner, "burn": burn, "seed": seed})


def closed_densities(bank: OperatorBank, symbols_back, symbols_fwd):
    """Equivariant densities of the closed cocycle at fibers 0..len(symbols_fwd).

    ``symbols_back`` are the symbols of fibers -K..-1.
    """
    m = bank.uniform_masses()
    for s in symbols_back:
        m = bank.PT[s] @ m
        m /= m.sum()
    out = [m]
    for s in symbols_fwd:
        m = bank.PT[s] @ m
        m = m / m.sum()
        out.append(m)
    return out


def variance_series(env: Environment, psi: Observable, eps: float, n_max: int | None = None,
                    fiber_samples: int = 1, grid: Grid | None = None, seed: int | None = None,
                    K: int | None = None, n_cells: int = DEFAULT_CELLS, bank: OperatorBank | None = None
                    ) -> VarianceEstimate:
    """Sigma^2 = int psi~^2 phi + 2 sum_{n=1}^{n_max} int L^(n)(psi~ phi) psi~_n, averaged over omega.

    Densities and transfer operators are Ulam approximations of the closed
    cocycle; psi~ is psi shifted on every fiber by its mean under the
    equivariant density there.
    """
    if psi.is_zero():
        return VarianceEstimate(eps, 0.0, "series", 0.0)
    if eps <= 0:
        raise DiffusionError("eps must be positive")
    seed = env.seed if seed is None else int(seed)
    if n_max is None:
        n_max = int(math.ceil(8.0 / (eps * env.assignment.beta_floor)))
    K = default_depth(eps) if K is None else K
    bank = bank or OperatorBank(env, eps, grid, None, n_cells)
    g = bank.grid
    L = g.lengths
    alpha = env.alphabet.size
    psi_c = [psi.cell_integrals(g.edges, s) for s in range(alpha)]
    psi_c2 = [psi.cell_integrals(g.edges, s, 2) for s in range(alpha)]
    scale = max(max(np.abs(c / L).max() for c in psi_c), 1e-300)
    estimates, tails, thetas = [], [], []
    seeds = _replica_seeds(seed, fiber_samples)
    for r in range(fiber_samples):
        path = env.path(-K, n_max, int(seeds[r]))
        syms = path.window(-K, n_max + 1)
        back, fwd = syms[:K], syms[K:]
        dens = closed_densities(bank, back, fwd[:n_max])
        shifts = np.array([np.dot(dens[k] / L, psi_c[fwd[k]]) for k in range(n_max + 1)])
        phi0 = dens[0] / L
        s0 = fwd[0]
        var0 = float(np.dot(phi0, psi_c2[s0] - 2 * shifts[0] * psi_c[s0] + shifts[0] ** 2 * L))
        f = phi0 * (psi_c[s0] - shifts[0] * L)
        cov = np.empty(n_max)
        for k in range(1, n_max + 1):
            f = bank.PT[fwd[k - 1]] @ f
            cov[k - 1] = np.dot(f / L, psi_c[fwd[k]] - shifts[k] * L)
        est = var0 + 2.0 * math.fsum(cov)
        theta, tail = _series_tail(cov, scale**2 * n_max * _ROUND)
        if theta >= 1:
            raise DiffusionError("autocovariances show no decay (fitted theta >= 1)")
        estimates.append(est)
        tails.append(tail)
        thetas.append(theta)
    est = float(np.mean(estimates))
    se = float(np.std(estimates, ddof=1) / math.sqrt(fiber_samples)) if fiber_samples > 1 else 0.0
    return VarianceEstimate(eps, est, "series", se, 0, fiber_samples, n_max, float(np.max(tails)),
                            float(np.max(thetas)), extra={"K": K, "n_cells": g.n, "seed": seed})


def _series_tail(cov: np.ndarray, floor: float):
    """Fitted geometric decay of |cov| and a bound on twice the neglected tail."""
    a = np.abs(cov)
    usable = np.flatnonzero(a > 1e3 * max(floor, 1e-300))
    if usable.size < 8:
        return 0.0, 2.0 * floor
    last = usable[-1]
    lo = usable[usable >= last // 2]
    lo = lo if lo.size >= 8 else usable[-8:]
    slope = np.polyfit(lo.astype(float), np.log(a[lo]), 1)[0]
    theta = float(math.exp(slope))
    if theta >= 1:
        return theta, float("inf")
    # extrapolate from the fitted envelope at n_max, doubled for safety
    envelope = math.exp(np.polyval(np.polyfit(lo.astype(float), np.log(a[lo]), 1), cov.size - 1))
    tail = 2.0 * 2.0 * envelope * theta / (1.0 - theta)
    return theta, float(tail + 2.0 * floor)


@dataclass
class NormalityReport:
    ks: float
    skewness: float
    excess_kurtosis: float
    sigma2: float
    n: int
    n_samples: int
    degenerate: bool = False


def clt_check(env: Environment, psi: Observable, eps: float, n: int, N: int, seed: int | None = None,
              burn: int | None = None) -> NormalityReport:
    """Distribution of S_n / sqrt(n) over N initial points on one fixed omega."""
    seed = env.seed if seed is None else int(seed)
    if psi.is_zero():
        return NormalityReport(float("nan"), float("nan"), float("nan"), 0.0, n, N, True)
    if burn is None:
        burn = int(math.ceil(10.0 / (eps * _spectral_gap(env))))
    S = _run_sums(env, psi, eps, _replica_seeds(seed, 1), N, n, burn, seed).ravel()
    z = (S - S.mean()) / math.sqrt(n)
    s2 = float(z.var(ddof=1))
    if s2 <= 1e-14 * max(1.0, psi.sup_norm() ** 2):
        return NormalityReport(float("nan"), float("nan"), float("nan"), s2, n, N, True)
    ks = float(stats.kstest(z, "norm", args=(0.0, math.sqrt(s2))).statistic)
    return NormalityReport(ks, float(stats.skew(z)), float(stats.kurtosis(z)), s2, n, N)


# -- sweeps ---------------------------------------------------------------------------


def limit_value(env: Environment, psi: Observable) -> float:
    """Small-eps limit of eps * Sigma^2 from the averaged jump process."""
    G = generator(env.beta_bar)
    p = stationary(G)
    pv = psi_vector(psi, env)
    return variance_limit(p, pv.averaged, G, tol=1e-10)


def richardson(eps, values) -> float:
    """Intercept of a straight-line fit of values against eps."""
    eps = np.asarray(eps, dtype=float)
    if eps.size < 2:
        return float(values[0])
    return float(np.polyfit(eps, np.asarray(values, dtype=float), 1)[1])


def diffusion_sweep(env: Environment, psi: Observable, eps_list, route: str = "trajectory", **kw) -> dict:
    """Table of variance estimates over eps with the limit value and a Richardson extrapolation."""
    lim = limit_value(env, psi)
    rows = []
    for eps in eps_list:
        if route == "trajectory":
            n = kw.get("n", 20_000)
            est = variance_trajectory(env, psi, eps, n, kw.get("N", 2_000), kw.get("n_inner", 4), kw.get("seed"))
        elif route == "series":
            est = variance_series(env, psi, eps, kw.get("n_max"), kw.get("fiber_samples", 1),
                                  seed=kw.get("seed"), n_cells=kw.get("n_cells", DEFAULT_CELLS))
        else:
            raise DiffusionError(f"unknown route {route!r}")
        rows.append({"eps": eps, "sigma2": est.sigma2, "eps_sigma2": est.eps_sigma2,
                     "stderr": eps * est.error, "route": route, "limit_value": lim})
    vals = [r["eps_sigma2"] for r in rows]
    return {"rows": rows, "limit_value": lim,
            "richardson": richardson(eps_list, vals) if any(vals) else 0.0}


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    cols = ["eps", "sigma2", "eps_sigma2", "stderr", "route", "limit_value"]
    w.writerow(cols)
    for r in rows:
        w.writerow([f"{r[c]:.17g}" if isinstance(r[c], float) else r[c] for c in cols])
    return buf.getvalue()
