"""
One computation and one verdict per acceptance criterion.

``compute(criterion, params, seed)`` returns (metrics, artifacts): metrics is
a JSON-able dict and artifacts maps file names to text.  ``verdict`` looks
only at the metrics dict, so it can be re-run on a stored bundle.
"""

from __future__ import annotations

import csv
import io
import math

import numpy as np

from .. import diffusion, jumps, markov, ulam
from ..environment import environment_from_dict
from ..maps import Interval, PairedTentParams, paired_tent_build
from . import properties


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _env(params, seed):
    d = dict(params["env"])
    d["seed"] = seed
    return environment_from_dict(d)


# -- 1: hole asymptotics ---------------------------------------------------------------


def c1(p, seed):
    rows = []
    pt = p["env"]["params"]["s0"]
    for eps in p["eps"]:
        t = paired_tent_build(PairedTentParams(pt["a"], pt["b"]), eps)
        mu = t.hole_measure(0, 1)
        B = eps * pt["b"]
        oracle = B / (1 + B)
        rows.append({"eps": eps, "mu": mu, "oracle": oracle, "abs_err": abs(mu - oracle),
                     "ratio": mu / eps, "beta": pt["b"], "ratio_err": abs(mu / eps - pt["b"])})
    m = {"rows": rows, "tol": p["tol"]}
    art = {"holes.csv": _csv(list(rows[0]), [list(r.values()) for r in rows])}
    return m, art


def v1(m):
    ok_exact = all(r["abs_err"] <= m["tol"] for r in m["rows"])
    ok_ratio = all(r["ratio_err"] <= r["eps"] for r in m["rows"])
    worst = max(r["abs_err"] for r in m["rows"])
    return ok_exact and ok_ratio, f"max |mu - eps b/(1+eps b)| = {worst:.3g}; |mu/eps - beta| <= eps: {ok_ratio}"


# -- 2: open/closed composition ---------------------------------------------------------------


def c2(p, seed):
    env = _env(p, seed)
    path = env.path(0, max(p["n_list"]))
    rows = []
    for n in p["n_list"]:
        d, surv = ulam.open_composition_check(env, path, p["j"], p["eps"], n, p["n_cells"])
        rows.append({"n": n, "discrepancy": d, "survivor_length": surv})
    m = {"rows": rows, "tol": p["tol"], "symbols": path.window(0, max(p["n_list"])).tolist()}
    return m, {"composition.csv": _csv(list(rows[0]), [list(r.values()) for r in rows])}


def v2(m):
    worst = max(r["discrepancy"] for r in m["rows"])
    return worst <= m["tol"], f"max discrepancy {worst:.3g} (tol {m['tol']:g})"


# -- 3: multiplier expansion ---------------------------------------------------------------------


def c3(p, seed):
    env = _env(p, seed)
    path = env.path(0, p["n_fibers"])
    rows = []
    for eps in p["eps"]:
        bank = ulam.OperatorBank(env, eps, None, p["j"], p["n_cells"])
        tri = ulam.equivariant_triple(env, path, p["j"], eps, n_forward=p["n_fibers"], bank=bank, nu_depth=1)
        r = (1 - tri.lambda_seq) / eps
        rows.append({"eps": eps, "rate_min": float(r.min()), "rate_max": float(r.max()),
                     "rate_mean": float(r.mean()), "K": tri.K, "ratio_gap": tri.ratio_gap,
                     "n_cells": bank.grid.n})
    return {"rows": rows, "band": p["band"]}, {"multipliers.csv": _csv(list(rows[0]), [list(r.values()) for r in rows])}


def v3(m):
    lo, hi = m["band"]
    rows = sorted(m["rows"], key=lambda r: -r["eps"])
    in_band = all(lo <= r["rate_min"] and r["rate_max"] <= hi for r in rows)
    dev = [abs(r["rate_mean"] - 1) for r in rows]
    dec = all(b < a for a, b in zip(dev, dev[1:]))
    return in_band and dec, f"(1-lambda)/eps = {[round(r['rate_mean'], 5) for r in rows]}; decreasing deviation: {dec}"


# -- 4: Birkhoff product ---------------------------------------------------------------------------


def c4(p, seed):
    env = _env(p, seed)
    path = env.path(0, 1)
    bank = ulam.OperatorBank(env, p["eps"], None, p["j"], p["n_cells"])
    prod = ulam.lambda_window_product(env, path, p["j"], p["eps"], p["t"], bank=bank)
    n = int(math.floor(p["t"] / p["eps"] + 1e-9))
    syms = env.path(0, n).window(0, n)
    beta = np.array([env.assignment.beta_of(env.alphabet.symbols[s])[p["j"]].sum() for s in syms])
    target = math.exp(-p["t"] * float(env.beta_bar[p["j"]].sum()))
    return {"product": prod, "target": target, "rel_tol": p["rel_tol"], "n_fibers": n,
            "window_beta_mean": float(beta.mean())}, {}


def v4(m):
    err = abs(m["product"] - m["target"])
    return err <= m["rel_tol"] * m["target"], f"product {m['product']:.5f} vs {m['target']:.5f} (rel err {err / m['target']:.3%})"


# -- 5: holding-time law --------------------------------------------------------------------------------


def c5(p, seed):
    env = _env(p, seed)
    r = jumps.compare_holding_law(env, p["eps"], p["j0"], p["N"], p["t_grid"], seed, p["mode"])
    rows = list(zip(r["t_grid"], r["empirical"], [math.exp(-t * r["rate"]) for t in r["t_grid"]], r["distance"]))
    m = {k: r[k] for k in ("sup_distance", "n_samples", "censored", "rate", "degenerate")}
    m["tol"] = p["tol"]
    return m, {"holding_law.csv": _csv(["t", "empirical_survival", "exponential", "distance"], rows)}


def v5(m):
    return (not m["degenerate"]) and m["sup_distance"] <= m["tol"], \
        f"sup distance {m['sup_distance']:.4f} over {m['n_samples']} samples ({m['censored']} censored)"


# -- 6: two-jump law ----------------------------------------------------------------------------------------


def c6(p, seed):
    env = _env(p, seed)
    deltas = [tuple(d) for d in p["deltas"]]
    dist = jumps.jump_distribution(env, p["eps"], p["j0"], p["N"], deltas, p["targets"], seed, p["mode"])
    oracle = markov.JumpOracle.from_beta(env.beta_bar)
    times, states = markov.simulate_jump_chain(oracle, p["j0"], len(p["targets"]), p["ctmc_samples"], seed + 1)
    hit = np.ones(p["ctmc_samples"], dtype=bool)
    for k, ((a, b), r) in enumerate(zip(deltas, p["targets"])):
        hit &= (times[:, k] >= a) & (times[:, k] <= b) & (states[:, k] == r)
    ctmc = float(hit.mean())
    m = dist.summary()
    m["wilson_lo"] = float(m["wilson_lo"])
    m["wilson_hi"] = float(m["wilson_hi"])
    m["oracle_value"] = float(m["oracle_value"])
    m.update({"ctmc_estimate": ctmc, "ctmc_samples": p["ctmc_samples"],
              "ctmc_stderr": math.sqrt(ctmc * (1 - ctmc) / p["ctmc_samples"]), "ctmc_sigmas": p["ctmc_sigmas"]})
    return m, {"two_jump_samples.csv": jumps.samples_csv(dist)}


def v6(m):
    inside = m["wilson_lo"] <= m["oracle_value"] <= m["wilson_hi"]
    cross = abs(m["ctmc_estimate"] - m["oracle_value"]) <= m["ctmc_sigmas"] * m["ctmc_stderr"]
    return inside and cross, (f"estimate {m['estimate']:.5f} in [{m['wilson_lo']:.5f}, {m['wilson_hi']:.5f}], "
                              f"oracle {m['oracle_value']:.5f}, chain simulation {m['ctmc_estimate']:.5f}")


# -- 7: Markov oracle -------------------------------------------------------------------------------------------


def c7(p, seed):
    rows = []
    pairs = [(s, t) for s in p["times"] for t in p["times"] if s + t <= 10]
    gens = []
    for (a, b), psi_r in zip(p["ab_grid"], p["psi_right"]):
        G = markov.generator([[0, b], [a, 0]])
        gens.append(G)
        pst = markov.stationary(G)
        psi = np.array([-b * psi_r / a, psi_r])
        v = markov.variance_limit(pst, psi, G)
        closed = markov.two_state_variance_limit(a, b, psi_r)
        x = markov.fundamental_solve(G, psi)
        quad = markov.fundamental_quadrature(G, psi)
        two = max(float(np.max(np.abs(markov.expm(G, t) - markov.expm_two_state(G, t)))) for t in p["times"])
        rows.append({"a_bar": a, "b_bar": b, "psi_right": psi_r,
                     "semigroup": markov.semigroup_defect(G, pairs),
                     "stationary_residual": markov.stationary_residual(G, pst),
                     "quadrature_gap": float(np.max(np.abs(x - quad))),
                     "variance_limit": v, "closed_form": closed, "variance_gap": abs(v - closed),
                     "two_state_expm_gap": two})
    G3 = markov.generator(p["m3_beta"])
    p3 = markov.stationary(G3)
    psi3 = np.array([1.0, -0.5, 2.0])
    psi3 = psi3 - p3 @ psi3
    x3 = markov.fundamental_solve(G3, psi3)
    m = {"rows": rows,
         "m3": {"semigroup": markov.semigroup_defect(G3, pairs),
                "stationary_residual": markov.stationary_residual(G3, p3),
                "null_vector_residual": float(np.max(np.abs(p3 @ G3))),
                "quadrature_gap": float(np.max(np.abs(x3 - markov.fundamental_quadrature(G3, psi3))))},
         "tol": {k: p[k] for k in ("semigroup_tol", "stationary_tol", "quadrature_tol", "variance_tol")}}
    return m, {"oracle.csv": _csv(list(rows[0]), [list(r.values()) for r in rows])}


def v7(m):
    t = m["tol"]
    allrows = m["rows"] + [m["m3"]]
    sg = max(r["semigroup"] for r in allrows)
    st = max(r["stationary_residual"] for r in allrows)
    qd = max(r["quadrature_gap"] for r in allrows)
    vg = max(r["variance_gap"] for r in m["rows"])
    ok = sg <= t["semigroup_tol"] and st <= t["stationary_tol"] and qd <= t["quadrature_tol"] and vg <= t["variance_tol"]
    return ok, f"semigroup {sg:.2g}, stationary {st:.2g}, quadrature {qd:.2g}, variance {vg:.2g}"


# -- 8: diffusion limit --------------------------------------------------------------------------------------------


def c8(p, seed):
    env = _env(p, seed)
    psi = diffusion.two_state_observable(*p["psi"])
    lim = diffusion.limit_value(env, psi)
    rows = []
    for eps in p["eps_sweep"]:
        tr = diffusion.variance_trajectory(env, psi, eps, p["n"], p["N"], p["n_inner"], seed)
        se = diffusion.variance_series(env, psi, eps, seed=seed, n_cells=p["n_cells"])
        rows.append({"eps": eps, "traj_eps_sigma2": tr.eps_sigma2, "traj_stderr": eps * tr.stderr,
                     "series_eps_sigma2": se.eps_sigma2, "series_stderr": eps * se.stderr,
                     "series_tail": eps * se.tail_bound, "series_theta": se.theta, "series_n_max": se.n_max,
                     "limit_value": lim})
    sweep = [(r["eps"], r["traj_eps_sigma2"] / r["eps"], r["traj_eps_sigma2"], r["traj_stderr"], "trajectory", lim)
             for r in rows]
    sweep += [(r["eps"], r["series_eps_sigma2"] / r["eps"], r["series_eps_sigma2"], r["series_stderr"] + r["series_tail"],
               "series", lim) for r in rows]
    m = {"rows": rows, "eps_main": p["eps_main"], "rel_tol": p["rel_tol"], "n_sigma": p["n_sigma"], "limit_value": lim,
         "richardson_trajectory": diffusion.richardson([r["eps"] for r in rows], [r["traj_eps_sigma2"] for r in rows]),
         "richardson_series": diffusion.richardson([r["eps"] for r in rows], [r["series_eps_sigma2"] for r in rows])}
    return m, {"diffusion_sweep.csv": _csv(["eps", "sigma2", "eps_sigma2", "stderr", "route", "limit_value"], sweep)}


def v8(m):
    rows = sorted(m["rows"], key=lambda r: -r["eps"])
    lim = m["limit_value"]
    k = m["n_sigma"]
    main = next(r for r in rows if r["eps"] == m["eps_main"])
    ok_main = abs(main["traj_eps_sigma2"] - lim) <= m["rel_tol"] * lim
    dev = [abs(r["traj_eps_sigma2"] - lim) for r in rows]
    se = [r["traj_stderr"] for r in rows]
    ok_trend = all(dev[i + 1] <= dev[i] + k * math.hypot(se[i], se[i + 1]) for i in range(len(rows) - 1))
    gaps = [abs(r["traj_eps_sigma2"] - r["series_eps_sigma2"])
            - k * math.hypot(r["traj_stderr"], r["series_stderr"]) - r["series_tail"] for r in rows]
    ok_agree = all(g <= 0 for g in gaps)
    return ok_main and ok_trend and ok_agree, (
        f"eps*Sigma^2 at {m['eps_main']}: {main['traj_eps_sigma2']:.4f} (limit {lim:g}); "
        f"trajectory {[round(r['traj_eps_sigma2'], 4) for r in rows]}, series {[round(r['series_eps_sigma2'], 4) for r in rows]}; "
        f"trend {ok_trend}, routes agree {ok_agree}")


# -- 9: CLT shape ----------------------------------------------------------------------------------------------------


def c9(p, seed):
    env = _env(p, seed)
    psi = diffusion.two_state_observable(*p["psi"])
    r = diffusion.clt_check(env, psi, p["eps"], p["n"], p["N"], seed)
    return {"ks": r.ks, "skewness": r.skewness, "excess_kurtosis": r.excess_kurtosis, "sigma2": r.sigma2,
            "eps_sigma2": p["eps"] * r.sigma2, "degenerate": r.degenerate, "ks_tol": p["ks_tol"],
            "skew_tol": p["skew_tol"]}, {}


def v9(m):
    ok = (not m["degenerate"]) and m["ks"] <= m["ks_tol"]
    return ok, f"KS {m['ks']:.4f}, skewness {m['skewness']:.3f}, excess kurtosis {m['excess_kurtosis']:.3f}"


# -- 10: property suites ---------------------------------------------------------------------------------------------


def c10(p, seed):
    res = properties.run_all(p["cases"], seed, p["n_cells"])
    return {"suites": res}, {"properties.csv": _csv(["suite", "cases", "failures", "first_failure"],
                                                    [[k, v["cases"], v["failures"], v["first_failure"]] for k, v in res.items()])}


def v10(m):
    bad = {k: v for k, v in m["suites"].items() if v["failures"]}
    n = sum(v["cases"] for v in m["suites"].values())
    return not bad, f"{len(m['suites'])} suites, {n} cases, failing suites: {sorted(bad) or 'none'}"


COMPUTE = {1: c1, 2: c2, 3: c3, 4: c4, 5: c5, 6: c6, 7: c7, 8: c8, 9: c9, 10: c10}
VERDICT = {1: v1, 2: v2, 3: v3, 4: v4, 5: v5, 6: v6, 7: v7, 8: v8, 9: v9, 10: v10}
TITLES = {
    1: "hole measure asymptotics",
    2: "open/closed composition identity",
    3: "multiplier expansion",
    4: "Birkhoff product of multipliers",
    5: "holding-time law",
    6: "joint two-jump law",
    7: "Markov oracle exactness",
    8: "diffusion coefficient limit",
    9: "quenched CLT shape",
    10: "property suites",
}


def compute(criterion: int, params: dict, seed: int):
    return COMPUTE[criterion](params, seed)


def verdict(criterion: int, metrics: dict):
    ok, detail = VERDICT[criterion](metrics)
    return bool(ok), detail
