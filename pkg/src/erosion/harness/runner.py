"""Experiment configuration, execution and persistence.

A run directory holds ``results.json`` (config snapshot, one report per
check, diagnostics, artifact names), one CSV per table, ``series.json``
with the plottable series and ``timing.json`` with the wall time.  Every
file except ``timing.json`` is a function of (name, params, root_seed).
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..stats import TestReport
from .experiments import REGISTRY, Experiment

DEFAULT_SEED = 20240611


def _check_value(name: str, key: str, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ValueError(f"{name}: parameter {key!r} expects {type(default).__name__}, got {value!r}")
    return value


def get_experiment(name: str) -> Experiment:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown experiment {name!r}; known: {', '.join(sorted(REGISTRY))}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    params: dict = field(default_factory=dict)
    root_seed: int = DEFAULT_SEED
    output_dir: str | None = None
    workers: int = 1  # execution detail, not part of the snapshot

    def __post_init__(self):
        exp = get_experiment(self.name)
        unknown = set(self.params) - set(exp.schema)
        if unknown:
            raise ValueError(f"{self.name}: unknown parameters {sorted(unknown)}")
        for k, v in self.params.items():
            _check_value(self.name, k, v, exp.schema[k])
        if not 0 <= int(self.root_seed) < 2**64:
            raise ValueError("root_seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ValueError("workers must be positive")

    def resolved(self) -> dict:
        exp = get_experiment(self.name)
        return {k: _check_value(self.name, k, self.params.get(k, d), d) for k, d in exp.schema.items()}

    def snapshot(self) -> dict:
        return {"name": self.name, "params": self.resolved(), "root_seed": int(self.root_seed)}


@dataclass
class RunRecord:
    config: dict
    reports: list[tuple[str, TestReport]]
    diagnostics: dict
    wall_time: float
    artifacts: list[str]
    series: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for _, r in self.reports)

    def to_dict(self) -> dict:
        exp = REGISTRY.get(self.config["name"])
        return {
            "config": self.config,
            "criterion": exp.criterion if exp else None,
            "passed": self.passed,
            "reports": [{"check": k, **json.loads(r.to_json())} for k, r in self.reports],
            "diagnostics": self.diagnostics,
            "artifacts": self.artifacts,
        }

    def summary_lines(self) -> list[str]:
        out = []
        for key, r in self.reports:
            tag = "PASS" if r.passed else "FAIL"
            out.append(f"{tag} {self.config['name']}/{key}: {r.statistic:.6g} <= {r.threshold:.6g}  ({r.description})")
        return out


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item"):  # numpy scalar
        return _jsonable(obj.item())
    return obj


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def run_experiment(config: ExperimentConfig) -> RunRecord:
    exp = get_experiment(config.name)
    params = config.resolved()
    t0 = time.perf_counter()
    outcome = exp.run(params, int(config.root_seed), config.workers)
    wall = time.perf_counter() - t0
    expected = exp.check_names(params)
    if sorted(outcome.reports) != sorted(expected) or len(expected) != len(set(expected)):
        raise RuntimeError(f"{config.name}: reports {sorted(outcome.reports)} do not match checks {sorted(expected)}")
    reports = [(k, outcome.reports[k]) for k in expected]
    artifacts = []
    if config.output_dir is not None:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, (header, rows) in sorted(outcome.tables.items()):
            (out / f"{name}.csv").write_text(_csv_text(header, rows))
            artifacts.append(f"{name}.csv")
        if outcome.series:
            (out / "series.json").write_text(_dump(outcome.series))
            artifacts.append("series.json")
    record = RunRecord(config.snapshot(), reports, _jsonable(outcome.diagnostics), wall, artifacts, outcome.series)
    if config.output_dir is not None:
        out = Path(config.output_dir)
        (out / "results.json").write_text(_dump(record.to_dict()))
        (out / "timing.json").write_text(_dump({"wall_time_s": wall}))
    return record


def load_run(run_dir) -> RunRecord:
    run_dir = Path(run_dir)
    data = json.loads((run_dir / "results.json").read_text())
    reports = [(r["check"], TestReport(float(r["statistic"]), float(r["threshold"]), bool(r["passed"]),
                                       r["description"])) for r in data["reports"]]
    timing = run_dir / "timing.json"
    wall = json.loads(timing.read_text())["wall_time_s"] if timing.exists() else math.nan
    series_path = run_dir / "series.json"
    series = json.loads(series_path.read_text()) if series_path.exists() else {}
    return RunRecord(data["config"], reports, data["diagnostics"], wall, data["artifacts"], series)
