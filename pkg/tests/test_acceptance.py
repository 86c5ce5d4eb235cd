"""Acceptance suite: every criterion at its stated tolerance with the committed master seed.

Each test prints one ``[PASS]``/``[FAIL]`` line and then asserts the verdict.
Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import time

import pytest

from metastable.harness import scenarios
from metastable.harness.config import CRITERIA, ExperimentConfig

CONFIG = ExperimentConfig("all")


@pytest.mark.parametrize("criterion", sorted(CRITERIA), ids=lambda c: f"criterion_{c:02d}")
def test_criterion(criterion, capsys):
    t0 = time.perf_counter()
    metrics, _ = scenarios.compute(criterion, CONFIG.params_for(criterion), CONFIG.seed_for(criterion))
    ok, detail = scenarios.verdict(criterion, metrics)
    elapsed = time.perf_counter() - t0
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion:2d} {scenarios.TITLES[criterion]}: "
              f"{detail} ({elapsed:.1f} s)")
    assert ok, detail
