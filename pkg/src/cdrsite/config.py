"""Pipeline configuration loaded from a single YAML file.

Relative paths are resolved against the directory holding the config file.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from datetime import date, datetime, time
from pathlib import Path
from typing import Any

import yaml

from .clustering import ClusterConfig
from .ingest import IngestConfig
from .pmedian import SolveOptions
from .residence import ResidenceConfig


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


DEFAULTS: dict[str, Any] = {
    "paths": {
        "towers": "data/towers.csv",
        "calls": "data/calls.csv",
        "boundary": "data/boundary.geojson",
        "partitions": "data/partitions.geojson",
        "facilities": "data/facilities.json",
        "ground_truth": "data/ground_truth.csv",
        "output_dir": "out",
        "cache_dir": "out/cache",
    },
    "ingest": {"dbscan_epsilon": 0.0005, "dbscan_min_points": 1, "strict": False,
               "partition_names": None, "period_start": None, "period_end": None},
    "residence": {"night_start": "23:00", "night_end": "08:00"},
    "cluster": {"total_k": 200, "seed": 0, "max_iters": 300, "tol": 1e-7},
    "costs": {
        "provider": "synthetic",
        "speed_mps": 5.0,
        "departure": "2018-12-10T10:00:00",
        "workers": 1,
        "http": {"endpoint": None, "key_env": "DISTANCE_MATRIX_API_KEY", "mode": "transit",
                 "max_origins": 10, "max_destinations": 10, "requests_per_second": 10.0},
    },
    "solve": {"m": 20, "epsilon": 1e-6, "node_limit": 200000, "time_limit": None, "seed": 0},
    "evaluate": {"current_set": "current"},
    "synth": {"seed": 20181210, "noise": 0.1, "tower_count": 1000},
}


def _merge(base: dict, over: dict, prefix: str, problems: list[str]) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in base:
            problems.append(f"unknown key {prefix}{k}")
        elif isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{prefix}{k}.", problems)
        else:
            out[k] = v
    return out


def _as_time(value) -> time:
    # YAML 1.1 reads an unquoted 23:00 as the base-60 integer 1380
    if isinstance(value, int) and not isinstance(value, bool):
        if not 0 <= value < 24 * 60:
            raise ValueError(f"{value} minutes is not a time of day")
        return time(*divmod(value, 60))
    return time.fromisoformat(str(value))


def _clock(text, key, problems) -> time | None:
    try:
        return _as_time(text)
    except ValueError:
        problems.append(f"{key}: not a clock time: {text!r}")
        return None


def _date(value, key, problems) -> date | None:
    if value is None or isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError:
        problems.append(f"{key}: not a date: {value!r}")
        return None


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path

    def path(self, key: str) -> Path:
        p = Path(self.raw["paths"][key])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path("output_dir")

    def section(self, name: str) -> dict:
        return self.raw[name]

    def ingest(self) -> IngestConfig:
        s = self.raw["ingest"]
        return IngestConfig(dbscan_epsilon=float(s["dbscan_epsilon"]), dbscan_min_points=int(s["dbscan_min_points"]),
                            strict=bool(s["strict"]), boundary_file=str(self.path("boundary")),
                            partition_files={"partitions": str(self.path("partitions"))},
                            period_start=_date(s["period_start"], "", []), period_end=_date(s["period_end"], "", []))

    def residence(self) -> ResidenceConfig:
        s = self.raw["residence"]
        return ResidenceConfig(_as_time(s["night_start"]), _as_time(s["night_end"]))

    def cluster(self) -> ClusterConfig:
        s = self.raw["cluster"]
        return ClusterConfig(total_k=int(s["total_k"]), seed=int(s["seed"]), max_iters=int(s["max_iters"]),
                             tol=float(s["tol"]))

    def solve_options(self) -> SolveOptions:
        s = self.raw["solve"]
        return SolveOptions(epsilon=float(s["epsilon"]), node_limit=int(s["node_limit"]),
                            time_limit=None if s["time_limit"] is None else float(s["time_limit"]),
                            seed=int(s["seed"]))

    @property
    def m(self) -> int:
        return int(self.raw["solve"]["m"])

    @property
    def departure(self) -> datetime | None:
        dep = self.raw["costs"]["departure"]
        return None if dep is None else datetime.fromisoformat(str(dep))


def validate(raw: dict) -> list[str]:
    problems: list[str] = []
    ing = raw["ingest"]
    try:
        if not float(ing["dbscan_epsilon"]) > 0:
            problems.append("ingest.dbscan_epsilon must be > 0")
    except (TypeError, ValueError):
        problems.append("ingest.dbscan_epsilon must be a number")
    if not isinstance(ing["dbscan_min_points"], int) or ing["dbscan_min_points"] < 1:
        problems.append("ingest.dbscan_min_points must be an integer >= 1")
    _date(ing["period_start"], "ingest.period_start", problems)
    _date(ing["period_end"], "ingest.period_end", problems)
    res = raw["residence"]
    a = _clock(res["night_start"], "residence.night_start", problems)
    b = _clock(res["night_end"], "residence.night_end", problems)
    if a is not None and a == b:
        problems.append("residence.night_start must differ from residence.night_end")
    cl = raw["cluster"]
    if not isinstance(cl["total_k"], int) or cl["total_k"] < 1:
        problems.append("cluster.total_k must be an integer >= 1")
    if not isinstance(cl["max_iters"], int) or cl["max_iters"] < 1:
        problems.append("cluster.max_iters must be an integer >= 1")
    sv = raw["solve"]
    if not isinstance(sv["m"], int) or sv["m"] < 1:
        problems.append("solve.m must be an integer >= 1")
    try:
        if not float(sv["epsilon"]) >= 0:
            problems.append("solve.epsilon must be >= 0")
    except (TypeError, ValueError):
        problems.append("solve.epsilon must be a number")
    co = raw["costs"]
    if co["provider"] not in ("synthetic", "http"):
        problems.append("costs.provider must be 'synthetic' or 'http'")
    if co["provider"] == "http" and not co["http"]["endpoint"]:
        problems.append("costs.http.endpoint is required for the http provider")
    try:
        if not float(co["speed_mps"]) > 0:
            problems.append("costs.speed_mps must be > 0")
    except (TypeError, ValueError):
        problems.append("costs.speed_mps must be a number")
    if co["departure"] is not None:
        try:
            datetime.fromisoformat(str(co["departure"]))
        except ValueError:
            problems.append(f"costs.departure: not a datetime: {co['departure']!r}")
    return problems


def apply_override(raw: dict, assignment: str, problems: list[str]) -> None:
    """Apply ``section.key=value``; the value is parsed as YAML."""
    if "=" not in assignment:
        problems.append(f"override {assignment!r} is not key=value")
        return
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            problems.append(f"override: unknown section {key!r}")
            return
        node = node[p]
    if parts[-1] not in node:
        problems.append(f"override: unknown key {key!r}")
        return
    node[parts[-1]] = yaml.safe_load(value)


def load_config(path: str | Path | None, overrides: list[str] = ()) -> PipelineConfig:
    problems: list[str] = []
    if path is None:
        doc, base = {}, Path.cwd()
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError([f"config file {p} does not exist"])
        try:
            doc = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError([f"{p}: {exc}"]) from exc
        base = p.resolve().parent
    if not isinstance(doc, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    raw = _merge(DEFAULTS, doc, "", problems)
    for o in overrides:
        apply_override(raw, o, problems)
    problems += validate(raw)
    if problems:
        raise ConfigError(problems)
    return PipelineConfig(raw, base)


def default_config_text(data_dir: str = "data", output_dir: str = "out") -> str:
    raw = copy.deepcopy(DEFAULTS)
    for k in ("towers", "calls", "boundary", "partitions", "facilities", "ground_truth"):
        raw["paths"][k] = f"{data_dir}/{Path(DEFAULTS['paths'][k]).name}"
    raw["paths"]["output_dir"] = output_dir
    raw["paths"]["cache_dir"] = f"{output_dir}/cache"
    return yaml.safe_dump(raw, sort_keys=False)
