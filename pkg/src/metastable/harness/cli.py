"""
Command line entry point.

    python -m metastable run --scenario oracle --out results
    python -m metastable verify --out results
    python -m metastable oracle --config env.json
    python -m metastable sweep --config sweep.json --out sweep

Exit status is 0 when every verdict passes, 2 when any fails and 1 on an
execution error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .. import diffusion
from ..environment import environment_from_dict
from ..markov import JumpOracle
from .config import DEFAULT_PARAMS, ExperimentConfig
from .runner import CorruptArtifact, resolve_jobs, run, verify


def _parser():
    ap = argparse.ArgumentParser(prog="metastable", description=__doc__.split("\n\n")[0].strip())
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_default="results"):
        p.add_argument("--config", type=Path, help="JSON configuration file")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--out", type=Path, default=None, help=f"output directory (default {out_default})")
        p.add_argument("--scenario", help="theorem1 | jumps | diffusion | oracle | properties | all")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (METASTABLE_JOBS overrides)")

    common(sub.add_parser("run", help="run a scenario and write a result bundle"))
    common(sub.add_parser("verify", help="recompute verdicts from a stored bundle"))
    common(sub.add_parser("oracle", help="print the averaged jump-process oracle as JSON"), "-")
    common(sub.add_parser("sweep", help="diffusion coefficient sweep over eps"), "sweep")
    return ap


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config.read_text()) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.scenario:
        cfg = ExperimentConfig(args.scenario, cfg.seed, cfg.out, cfg.params)
    if args.out is not None:
        cfg.out = str(args.out)
    return cfg


def _print_verdicts(bundle) -> int:
    for v in bundle.verdicts:
        print(v.line)
    return 0 if bundle.all_passed else 2


def cmd_run(args) -> int:
    cfg = _load_config(args)
    bundle = run(cfg, resolve_jobs(args.jobs), log=lambda m: print(m, file=sys.stderr))
    print(f"bundle written to {bundle.path} (config hash {bundle.config_hash[:12]})")
    return _print_verdicts(bundle)


def cmd_verify(args) -> int:
    path = args.out or (Path(ExperimentConfig.from_json(args.config.read_text()).out) if args.config else Path("results"))
    return _print_verdicts(verify(path))


def cmd_oracle(args) -> int:
    d = json.loads(args.config.read_text()) if args.config else {}
    env_d = d.get("env", DEFAULT_PARAMS[6]["env"])
    env = environment_from_dict(env_d)
    queries = d.get("queries", [{"j0": DEFAULT_PARAMS[6]["j0"], "deltas": DEFAULT_PARAMS[6]["deltas"],
                                 "targets": DEFAULT_PARAMS[6]["targets"]}])
    text = JumpOracle.from_beta(env.beta_bar).to_json(queries)
    if args.out is None or str(args.out) == "-":
        print(text)
    else:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "oracle.json").write_text(text + "\n")
    return 0


def cmd_sweep(args) -> int:
    d = json.loads(args.config.read_text()) if args.config else {}
    base = DEFAULT_PARAMS[8]
    env_d = dict(d.get("env", base["env"]))
    seed = args.seed if args.seed is not None else d.get("seed", 0)
    env_d["seed"] = seed
    env = environment_from_dict(env_d)
    psi = diffusion.two_state_observable(*d.get("psi", base["psi"]))
    eps_list = d.get("eps", base["eps_sweep"])
    route = d.get("route", "trajectory")
    res = diffusion.diffusion_sweep(env, psi, eps_list, route, n=d.get("n", base["n"]), N=d.get("N", base["N"]),
                                    seed=seed, n_cells=d.get("n_cells", base["n_cells"]))
    out = args.out or Path("sweep")
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(diffusion.sweep_csv(res["rows"]), newline="")
    meta = {"seed": seed, "env": env.to_dict(), "route": route, "eps": eps_list,
            "limit_value": res["limit_value"], "richardson": res["richardson"]}
    (out / "sweep.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for r in res["rows"]:
        print(f"eps={r['eps']:<6g} eps*Sigma^2={r['eps_sigma2']:.5f} +- {r['stderr']:.5f} (limit {r['limit_value']:g})")
    print(f"extrapolated to eps=0: {res['richardson']:.5f}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return {"run": cmd_run, "verify": cmd_verify, "oracle": cmd_oracle, "sweep": cmd_sweep}[args.command](args)
    except (CorruptArtifact, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
