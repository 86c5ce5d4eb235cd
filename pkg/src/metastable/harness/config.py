"""Experiment configuration: defaults per scenario, JSON round trip, seeds."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

SCHEMA_VERSION = 1
DEFAULT_SEED = 0

SCENARIOS = ("theorem1", "jumps", "oracle", "diffusion", "properties")

# criterion id -> scenario
CRITERIA = {
    1: "theorem1",
    2: "theorem1",
    3: "theorem1",
    4: "theorem1",
    5: "jumps",
    6: "jumps",
    7: "oracle",
    8: "diffusion",
    9: "diffusion",
    10: "properties",
}

DEFAULT_PARAMS = {
    1: {"env": {"symbols": ["s0"], "probs": [1.0], "family": "paired_tent", "params": {"s0": {"a": 1.0, "b": 1.0}}},
        "eps": [0.1, 0.04, 0.01], "tol": 1e-12},
    2: {"env": {"symbols": ["s0", "s1"], "probs": [0.5, 0.5], "family": "paired_tent",
                "params": {"s0": {"a": 1.0, "b": 1.0}, "s1": {"a": 0.6, "b": 0.8}}},
        "eps": 0.1, "n_list": [1, 2, 3], "n_cells": 1024, "j": 0, "tol": 1e-12},
    3: {"env": {"symbols": ["s0"], "probs": [1.0], "family": "paired_tent", "params": {"s0": {"a": 1.0, "b": 1.0}}},
        "eps": [0.04, 0.02, 0.01], "n_cells": 16384, "j": 0, "n_fibers": 8, "band": [0.95, 1.05]},
    4: {"env": {"symbols": ["s0", "s1"], "probs": [0.5, 0.5], "family": "paired_tent",
                "params": {"s0": {"a": 1.0, "b": 0.5}, "s1": {"a": 1.0, "b": 1.5}}},
        "eps": 0.005, "t": 1.0, "j": 0, "n_cells": 16384, "rel_tol": 0.05},
    5: {"env": {"symbols": ["s0"], "probs": [1.0], "family": "paired_tent", "params": {"s0": {"a": 1.0, "b": 1.0}}},
        "eps": 0.01, "N": 100000, "j0": 0, "t_grid": [round(0.1 * k, 10) for k in range(1, 31)],
        "mode": "quenched", "tol": 0.02},
    6: {"env": {"symbols": ["s0"], "probs": [1.0], "family": "m_well",
                "params": {"s0": {"beta": [[0, 1, 0], [1, 0, 2], [0, 1, 0]]}}},
        "eps": 0.01, "N": 100000, "j0": 1, "deltas": [[0.0, 1.0], [0.0, 0.5]], "targets": [2, 1],
        "mode": "quenched", "ctmc_samples": 1000000, "ctmc_sigmas": 4.0},
    7: {"ab_grid": [[1.0, 1.0], [2.0, 1.0], [1.0, 2.0], [0.5, 1.5], [1.5, 0.25]],
        "psi_right": [1.0, 1.0, 1.0, 0.5, 2.0],
        "m3_beta": [[0, 1, 0], [2, 0, 1], [0, 1, 0]],
        "times": [0.0, 0.1, 0.5, 1.0, 2.5, 5.0, 10.0],
        "semigroup_tol": 1e-10, "stationary_tol": 1e-12, "quadrature_tol": 1e-8, "variance_tol": 1e-10},
    8: {"env": {"symbols": ["s0"], "probs": [1.0], "family": "paired_tent", "params": {"s0": {"a": 1.0, "b": 1.0}}},
        "psi": [-1.0, 1.0], "eps_main": 0.02, "eps_sweep": [0.04, 0.02, 0.01],
        "n": 20000, "N": 2000, "n_inner": 4, "n_cells": 16384, "rel_tol": 0.15, "n_sigma": 2.0},
    9: {"env": {"symbols": ["s0"], "probs": [1.0], "family": "paired_tent", "params": {"s0": {"a": 1.0, "b": 1.0}}},
        "psi": [-1.0, 1.0], "eps": 0.02, "n": 10000, "N": 10000, "ks_tol": 0.02, "skew_tol": 0.1},
    10: {"cases": 200, "n_cells": 256},
}


def derive_seed(master: int, label) -> int:
    """Independent 63-bit seed for a labelled sub-experiment."""
    h = hashlib.sha256(f"{int(master)}:{label}".encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


@dataclass
class ExperimentConfig:
    scenario: str = "all"
    seed: int = DEFAULT_SEED
    out: str = "results"
    params: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.scenario != "all" and self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from all, {', '.join(SCENARIOS)}")
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {self.schema_version}")
        self.seed = int(self.seed)
        self.params = {int(k): v for k, v in self.params.items()}

    def criteria(self) -> list[int]:
        return [c for c, s in CRITERIA.items() if self.scenario in ("all", s)]

    def params_for(self, criterion: int) -> dict:
        p = copy.deepcopy(DEFAULT_PARAMS[criterion])
        p.update(copy.deepcopy(self.params.get(criterion, {})))
        return p

    def seed_for(self, criterion: int) -> int:
        return derive_seed(self.seed, f"criterion-{criterion}")

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "scenario": self.scenario, "seed": self.seed,
                "out": self.out, "params": {str(k): v for k, v in sorted(self.params.items())}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"schema_version", "scenario", "seed", "out", "params"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(d.get("scenario", "all"), d.get("seed", DEFAULT_SEED), d.get("out", "results"),
                   d.get("params", {}), d.get("schema_version", SCHEMA_VERSION))

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()
