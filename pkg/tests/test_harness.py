import json
import math
import subprocess
import sys

import pytest
from hypothesis import given, settings, strategies as st

from metastable.harness import ExperimentConfig, derive_seed, run, verify
from metastable.harness.cli import main
from metastable.harness.config import CRITERIA, DEFAULT_PARAMS
from metastable.harness.runner import CorruptArtifact, resolve_jobs
from metastable.harness import scenarios

SMALL_JUMPS = {5: {"N": 3000}, 6: {"N": 3000, "ctmc_samples": 20000}}


def test_every_criterion_has_one_scenario_and_verdict():
    assert sorted(CRITERIA) == list(range(1, 11))
    assert set(scenarios.COMPUTE) == set(scenarios.VERDICT) == set(CRITERIA)


def test_unknown_scenario_and_keys_rejected():
    with pytest.raises(ValueError):
        ExperimentConfig("nope")
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"scenario": "oracle", "bogus": 1})


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["all", "theorem1", "jumps", "oracle", "diffusion", "properties"]),
       st.integers(0, 2**64 - 1), st.dictionaries(st.sampled_from(list(CRITERIA)),
                                                  st.dictionaries(st.sampled_from(["N", "n", "eps"]),
                                                                  st.integers(1, 10**6), max_size=2), max_size=3))
def test_config_round_trip(scenario, seed, params):
    cfg = ExperimentConfig(scenario, seed, "out/dir", params)
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back.to_json() == cfg.to_json() and back.hash() == cfg.hash()


def test_derived_seeds_are_stable_and_distinct():
    assert derive_seed(0, "criterion-1") == derive_seed(0, "criterion-1")
    seeds = {derive_seed(0, f"criterion-{c}") for c in CRITERIA}
    assert len(seeds) == len(CRITERIA)
    assert all(0 <= s < 2**63 for s in seeds)


def test_hash_ignores_output_directory():
    assert ExperimentConfig("oracle", 1, "a").hash() == ExperimentConfig("oracle", 1, "b").hash()
    assert ExperimentConfig("oracle", 1, "a").hash() != ExperimentConfig("oracle", 2, "a").hash()


def test_jobs_environment_override(monkeypatch):
    monkeypatch.setenv("METASTABLE_JOBS", "3")
    assert resolve_jobs(1) == 3
    monkeypatch.delenv("METASTABLE_JOBS")
    assert resolve_jobs(None) == 1


def test_oracle_scenario_passes(tmp_path):
    bundle = run(ExperimentConfig("oracle", 0, str(tmp_path)))
    status = {v.criterion: v.status for v in bundle.verdicts}
    assert status[7] == "pass"
    assert all(status[c] == "skipped" for c in CRITERIA if c != 7)
    assert (tmp_path / "criterion_07" / "oracle.csv").exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config_hash"] == bundle.config_hash


def test_verify_untouched_edited_and_missing(tmp_path):
    first = run(ExperimentConfig("oracle", 0, str(tmp_path)))
    again = verify(tmp_path)
    assert [v.line for v in again.verdicts] == [v.line for v in first.verdicts]
    csv_path = tmp_path / "criterion_07" / "oracle.csv"
    original = csv_path.read_bytes()
    csv_path.write_bytes(original + b"tampered\r\n")
    with pytest.raises(CorruptArtifact):
        verify(tmp_path)
    csv_path.write_bytes(original)
    (tmp_path / "criterion_07" / "metrics.json").unlink()
    assert {v.status for v in verify(tmp_path).verdicts} == {"skipped"}


def test_identical_config_gives_identical_artifacts(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    ba = run(ExperimentConfig("jumps", 5, str(a), SMALL_JUMPS))
    bb = run(ExperimentConfig("jumps", 5, str(b), SMALL_JUMPS), jobs=2)
    assert ba.config_hash == bb.config_hash
    # config.json and the manifest record the output directory; timings vary
    skip = ("timings.json", "config.json", "manifest.json")
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name not in skip)
    assert any(p.suffix == ".csv" for p in files)
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--scenario", "oracle", "--out", str(tmp_path / "ok")]) == 0
    assert "[PASS   ] criterion  7" in capsys.readouterr().out
    assert main(["verify", "--out", str(tmp_path / "ok")]) == 0
    cfg = tmp_path / "strict.json"
    cfg.write_text(json.dumps({"scenario": "oracle", "params": {"7": {"variance_tol": -1.0}}}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "bad")]) == 2
    assert main(["verify", "--out", str(tmp_path / "missing")]) == 1


def test_cli_oracle_json(capsys):
    assert main(["oracle"]) == 0
    d = json.loads(capsys.readouterr().out)
    # leave well 2 for well 3 within [0, 1], then return within [0, 0.5]
    assert d["queries"][0]["prob"] == pytest.approx(2 / 3 * (1 - math.exp(-3)) * (1 - math.exp(-0.5)), rel=1e-12)


def test_cli_sweep_writes_table(tmp_path):
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"eps": [0.2, 0.1], "n": 2000, "N": 50}))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "sw")]) == 0
    lines = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "eps,sigma2,eps_sigma2,stderr,route,limit_value" and len(lines) == 3


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "metastable", "run", "--scenario", "oracle", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
