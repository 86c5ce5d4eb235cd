"""Experiment orchestration: configuration, scenarios, result bundles and the CLI."""

from .config import ExperimentConfig, derive_seed
from .runner import ResultBundle, Verdict, run, verify

__all__ = ["ExperimentConfig", "derive_seed", "ResultBundle", "Verdict", "run", "verify"]
