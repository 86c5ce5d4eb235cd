"""Run scenarios, persist a result bundle and re-derive verdicts from it."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import scenarios
from .config import CRITERIA, ExperimentConfig


class CorruptArtifact(RuntimeError):
    pass


@dataclass
class Verdict:
    criterion: int
    title: str
    status: str  # pass | fail | skipped
    detail: str

    @property
    def line(self) -> str:
        return f"[{self.status.upper():7s}] criterion {self.criterion:2d} {self.title}: {self.detail}"


@dataclass
class ResultBundle:
    path: Path
    config_hash: str
    verdicts: list
    timings: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(v.status != "fail" for v in self.verdicts)


def resolve_jobs(jobs: int | None) -> int:
    env = os.environ.get("METASTABLE_JOBS")
    if env:
        return max(1, int(env))
    return max(1, int(jobs or 1))


def _job(args):
    criterion, params, seed = args
    t0 = time.perf_counter()
    metrics, artifacts = scenarios.compute(criterion, params, seed)
    return criterion, metrics, artifacts, time.perf_counter() - t0


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(config: ExperimentConfig, jobs: int | None = None, log=None) -> ResultBundle:
    """Execute the configured scenario(s) and write the bundle to ``config.out``."""
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise RuntimeError(f"output directory {out} is not writable: {exc}") from exc
    units = [(c, config.params_for(c), config.seed_for(c)) for c in config.criteria()]
    n_jobs = resolve_jobs(jobs)
    if n_jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_job, units))
    else:
        results = []
        for u in units:
            results.append(_job(u))
            if log:
                log(f"criterion {u[0]} computed in {results[-1][3]:.1f} s")
    (out / "config.json").write_text(config.to_json() + "\n")
    files = ["config.json"]
    timings = {}
    # single collector: all writes happen here, in criterion order
    for criterion, metrics, artifacts, elapsed in sorted(results, key=lambda r: r[0]):
        d = out / f"criterion_{criterion:02d}"
        d.mkdir(exist_ok=True)
        (d / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
        files.append(f"criterion_{criterion:02d}/metrics.json")
        for name, text in sorted(artifacts.items()):
            (d / name).write_text(text, newline="")
            files.append(f"criterion_{criterion:02d}/{name}")
        timings[criterion] = elapsed
    manifest = {"config_hash": config.hash(), "files": {f: _sha(out / f) for f in files}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "timings.json").write_text(json.dumps({str(k): v for k, v in timings.items()}, indent=2) + "\n")
    bundle = verify(out)
    bundle.timings = timings
    return bundle


def verify(path) -> ResultBundle:
    """Recompute every verdict from the stored metrics; hashes must match the manifest."""
    out = Path(path)
    mpath = out / "manifest.json"
    if not mpath.exists():
        raise CorruptArtifact(f"no manifest in {out}")
    manifest = json.loads(mpath.read_text())
    for f, h in manifest["files"].items():
        p = out / f
        if p.exists() and _sha(p) != h:
            raise CorruptArtifact(f"hash mismatch for {f}")
    verdicts = []
    for c in CRITERIA:
        rel = f"criterion_{c:02d}/metrics.json"
        p = out / rel
        if rel not in manifest["files"] or not p.exists():
            verdicts.append(Verdict(c, scenarios.TITLES[c], "skipped", "no stored metrics"))
            continue
        ok, detail = scenarios.verdict(c, json.loads(p.read_text()))
        verdicts.append(Verdict(c, scenarios.TITLES[c], "pass" if ok else "fail", detail))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["criterion", "title", "status", "detail"])
    for v in verdicts:
        w.writerow([v.criterion, v.title, v.status, v.detail])
    (out / "verdicts.csv").write_text(buf.getvalue(), newline="")
    return ResultBundle(out, manifest["config_hash"], verdicts)
