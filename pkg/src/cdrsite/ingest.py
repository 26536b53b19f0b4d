"""Tower-site and call-record ingestion.

Tower file (``towers.csv``), one row per original site::

    site_id,lat,lon,city,district

``lat``/``lon`` are decimal degrees or DMS text such as ``41°00'36.5"N``;
both empty means the site has no coordinates.  ``city`` and ``district`` are
kept for reference only.

Call file (``calls.csv``), one row per call event::

    caller_id,caller_group,callee_group,call_type,service,timestamp,site_id

``caller_group``/``callee_group`` are ``refugee`` or ``non-refugee``;
``call_type`` is ``inbound``/``outbound``; ``service`` is ``voice`` or
``sms``; ``timestamp`` is local time ``YYYY-MM-DD HH:MM:SS``.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from sklearn.cluster import DBSCAN

from .geo import BoundaryPolygon, GeoPoint, GeometryError, contains_many, dms_to_decimal, parse_dms

log = logging.getLogger(__name__)

TOWER_COLUMNS = ("site_id", "lat", "lon", "city", "district")
CALL_COLUMNS = ("caller_id", "caller_group", "callee_group", "call_type", "service", "timestamp", "site_id")
CLEAN_TOWER_COLUMNS = ("tower_id", "lat", "lon", "partition", "merged_site_ids")
CLEAN_CALL_COLUMNS = ("caller_id", "caller_group", "timestamp", "tower_id", "call_type")

REFUGEE = "refugee"
NON_REFUGEE = "non-refugee"
CALLER_GROUPS = (REFUGEE, NON_REFUGEE)


class IngestError(ValueError):
    pass


@dataclass
class ErrorReport:
    """Line-level problems found while reading input files."""

    entries: list[tuple[str, int, str]] = field(default_factory=list)
    counters: Counter = field(default_factory=Counter)

    def add(self, path, line: int, message: str) -> None:
        self.entries.append((str(path), line, message))

    def count(self, key: str, k: int = 1) -> None:
        self.counters[key] += k

    def __len__(self) -> int:
        return len(self.entries)

    def lines(self) -> list[str]:
        out = [f"{p}:{ln}: {msg}" for p, ln, msg in self.entries]
        out += [f"# {k}: {v}" for k, v in sorted(self.counters.items())]
        return out

    def write(self, path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.lines()), encoding="utf-8")


@dataclass(frozen=True, slots=True)
class RawTowerRecord:
    site_id: str
    location: GeoPoint | None
    declared_city: str | None = None
    declared_district: str | None = None


@dataclass(frozen=True)
class TowerSite:
    tower_id: str
    location: GeoPoint
    merged_site_ids: frozenset
    partition: str


@dataclass(frozen=True, slots=True)
class CallRecord:
    caller_id: str
    caller_group: str
    timestamp: datetime
    tower_id: str
    call_type: str = ""


@dataclass
class IngestConfig:
    dbscan_epsilon: float = 0.0005
    dbscan_min_points: int = 1
    strict: bool = False
    boundary_file: str | None = None
    partition_files: dict = field(default_factory=dict)
    period_start: date | None = None
    period_end: date | None = None

    def __post_init__(self):
        if not self.dbscan_epsilon > 0:
            raise IngestError("dbscan_epsilon must be positive")
        if self.dbscan_min_points < 1:
            raise IngestError("dbscan_min_points must be >= 1")


def _coordinate(text: str, axis: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    c = parse_dms(text)
    if axis == "lat" and c.hemisphere not in ("N", "S"):
        raise GeometryError(f"latitude with hemisphere {c.hemisphere}")
    if axis == "lon" and c.hemisphere not in ("E", "W"):
        raise GeometryError(f"longitude with hemisphere {c.hemisphere}")
    return dms_to_decimal(c)


def _fail(path, line, msg, strict, report):
    if strict:
        raise IngestError(f"{path}:{line}: {msg}")
    if report is not None:
        report.add(path, line, msg)


def _reader(fh, path, expected):
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        raise IngestError(f"{path}: empty file")
    header = [h.strip() for h in header]
    missing = [c for c in expected if c not in header]
    if missing:
        raise IngestError(f"{path}: missing columns {missing}")
    return reader, [header.index(c) for c in expected], len(header)


def parse_towers(path, strict: bool = False, report: ErrorReport | None = None) -> list[RawTowerRecord]:
    records: list[RawTowerRecord] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader, idx, width = _reader(fh, path, TOWER_COLUMNS)
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                _fail(path, line, f"expected {width} fields, got {len(row)}", strict, report)
                continue
            site_id, lat_s, lon_s, city, district = (row[i].strip() for i in idx)
            if not site_id:
                _fail(path, line, "empty site_id", strict, report)
                continue
            if site_id in seen:
                _fail(path, line, f"duplicate site_id {site_id!r}", strict, report)
                continue
            location = None
            if lat_s or lon_s:
                if not (lat_s and lon_s):
                    _fail(path, line, "only one of lat/lon given", strict, report)
                    continue
                try:
                    location = GeoPoint(lat=_coordinate(lat_s, "lat"), lon=_coordinate(lon_s, "lon"))
                except GeometryError as exc:
                    _fail(path, line, f"bad coordinates: {exc}", strict, report)
                    continue
            seen.add(site_id)
            records.append(RawTowerRecord(site_id, location, city or None, district or None))
    return records


def assign_partition(lons, lats, partitions: Mapping[str, BoundaryPolygon]) -> list[str | None]:
    """First partition (in mapping order) containing each point, else None."""
    out: list[str | None] = [None] * len(lons)
    for name, poly in partitions.items():
        hit = contains_many(poly, lons, lats)
        for k in np.flatnonzero(hit):
            if out[k] is None:
                out[k] = name
    return out


def clean_towers(raw: Iterable[RawTowerRecord], cfg: IngestConfig, boundary: BoundaryPolygon,
                 partitions: Mapping[str, BoundaryPolygon], report: ErrorReport | None = None) -> list[TowerSite]:
    """Drop unlocated sites, merge near duplicates, keep sites inside ``boundary``.

    The declared city is ignored; location alone decides.  Sites DBSCAN marks
    as noise (only possible with ``dbscan_min_points > 1``) are kept as
    singletons.
    """
    located = sorted((r for r in raw if r.location is not None), key=lambda r: r.site_id)
    if report is not None:
        report.count("towers_without_coordinates", sum(1 for r in raw if r.location is None))
    if not located:
        raise IngestError("no tower has coordinates")
    xy = np.array([r.location.xy for r in located])
    labels = DBSCAN(eps=cfg.dbscan_epsilon, min_samples=cfg.dbscan_min_points,
                    metric="euclidean", algorithm="kd_tree").fit(xy).labels_
    groups: dict[int, list[int]] = defaultdict(list)
    next_label = int(labels.max()) + 1
    for k, lab in enumerate(labels):
        if lab < 0:
            lab, next_label = next_label, next_label + 1
        groups[int(lab)].append(k)

    merged = []
    for members in groups.values():
        lon = math.fsum(xy[k, 0] for k in members) / len(members)
        lat = math.fsum(xy[k, 1] for k in members) / len(members)
        ids = frozenset(located[k].site_id for k in members)
        merged.append((min(ids), GeoPoint(lat=lat, lon=lon), ids))
    merged.sort(key=lambda t: t[0])

    lons = np.array([p.lon for _, p, _ in merged])
    lats = np.array([p.lat for _, p, _ in merged])
    inside = contains_many(boundary, lons, lats)
    sides = assign_partition(lons, lats, partitions) if partitions else [""] * len(merged)
    sites = []
    for (tid, loc, ids), ok, side in zip(merged, inside, sides):
        if not ok:
            if report is not None:
                report.count("towers_outside_boundary", len(ids))
            continue
        if side is None:
            if report is not None:
                report.count("towers_outside_partitions", len(ids))
            continue
        sites.append(TowerSite(tid, loc, ids, side))
    if report is not None:
        report.count("towers_merged_away", sum(len(s.merged_site_ids) - 1 for s in sites))
    if not sites:
        raise IngestError("no tower survived cleaning")
    return sites


def site_map(towers: Iterable[TowerSite]) -> dict[str, str]:
    """Original site_id -> canonical tower_id."""
    return {sid: t.tower_id for t in towers for sid in t.merged_site_ids}


def parse_calls(path, towers: Iterable[TowerSite], strict: bool = False, report: ErrorReport | None = None,
                period: tuple[date | None, date | None] = (None, None)) -> list[CallRecord]:
    """Refugee voice calls inner-joined to surviving towers.

    ``call_type`` is carried along but never used for filtering.
    """
    mapping = site_map(towers)
    start, end = period
    calls: list[CallRecord] = []
    drops: Counter = Counter()
    with open(path, newline="", encoding="utf-8") as fh:
        reader, idx, width = _reader(fh, path, CALL_COLUMNS)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != width:
                _fail(path, line, f"expected {width} fields, got {len(row)}", strict, report)
                drops["malformed"] += 1
                continue
            caller, group, _callee, call_type, service, ts, site = (row[i].strip() for i in idx)
            if group not in CALLER_GROUPS or not caller:
                _fail(path, line, f"bad caller fields ({caller!r}, {group!r})", strict, report)
                drops["malformed"] += 1
                continue
            try:
                when = datetime.fromisoformat(ts)
            except ValueError:
                _fail(path, line, f"bad timestamp {ts!r}", strict, report)
                drops["bad_timestamp"] += 1
                continue
            if group != REFUGEE:
                drops["non_refugee"] += 1
                continue
            if service.lower() != "voice":
                drops["not_voice"] += 1
                continue
            tower = mapping.get(site)
            if tower is None:
                drops["unresolved_site"] += 1
                continue
            if (start and when.date() < start) or (end and when.date() > end):
                drops["outside_period"] += 1
                continue
            calls.append(CallRecord(caller, group, when, tower, call_type))
    if report is not None:
        for k, v in sorted(drops.items()):
            report.count(f"calls_dropped_{k}", v)
        report.count("calls_kept", len(calls))
    return calls


def write_towers(towers: Iterable[TowerSite], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLEAN_TOWER_COLUMNS)
        for t in towers:
            w.writerow([t.tower_id, repr(t.location.lat), repr(t.location.lon), t.partition,
                        ";".join(sorted(t.merged_site_ids))])


def read_towers(path) -> list[TowerSite]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            TowerSite(r["tower_id"], GeoPoint(lat=float(r["lat"]), lon=float(r["lon"])),
                      frozenset(r["merged_site_ids"].split(";")), r["partition"])
            for r in csv.DictReader(fh)
        ]


def write_calls(calls: Iterable[CallRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLEAN_CALL_COLUMNS)
        for c in calls:
            w.writerow([c.caller_id, c.caller_group, c.timestamp.isoformat(sep=" "), c.tower_id, c.call_type])


def read_calls(path) -> list[CallRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [CallRecord(r[0], r[1], datetime.fromisoformat(r[2]), r[3], r[4]) for r in reader]
