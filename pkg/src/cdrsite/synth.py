"""Synthetic tower and call datasets with known home towers.

The default scenario is a two-sided city loosely shaped like Istanbul: a
western partition carrying roughly 65% of call activity and an eastern one
with the remaining 35%.  Files follow the layouts documented in
:mod:`cdrsite.ingest`.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from shapely.geometry import LineString, Polygon
from shapely.ops import split

from .geo import BoundaryPolygon, contains_many, decimal_to_dms, format_dms
from .ingest import CALL_COLUMNS, TOWER_COLUMNS


class ScenarioError(ValueError):
    pass


CITY_RING = [
    (28.45, 41.00), (28.60, 40.96), (28.80, 40.96), (28.95, 40.99), (29.02, 41.00), (29.10, 40.92),
    (29.25, 40.84), (29.40, 40.82), (29.45, 40.95), (29.35, 41.12), (29.15, 41.22), (29.00, 41.25),
    (28.80, 41.22), (28.55, 41.15), (28.45, 41.00),
]
STRAIT = [(29.00, 41.30), (29.00, 41.25), (29.04, 41.10), (29.02, 41.00), (29.02, 40.90)]


def default_city() -> tuple[BoundaryPolygon, dict[str, BoundaryPolygon]]:
    """City outline and its west/east halves split along a strait line."""
    city = Polygon(CITY_RING)
    pieces = sorted(split(city, LineString(STRAIT)).geoms, key=lambda g: g.centroid.x)
    if len(pieces) != 2:
        raise ScenarioError("strait line must split the city in two")
    boundary = BoundaryPolygon.from_lonlat("city", [CITY_RING])
    sides = {
        "europe": BoundaryPolygon.from_lonlat("europe", [list(pieces[0].exterior.coords)]),
        "asia": BoundaryPolygon.from_lonlat("asia", [list(pieces[1].exterior.coords)]),
    }
    return boundary, sides


@dataclass(frozen=True)
class Blob:
    lat: float
    lon: float
    stddev: float
    person_count: int


DEFAULT_BLOBS = (
    Blob(41.02, 28.62, 0.040, 3000),
    Blob(41.01, 28.93, 0.025, 4200),
    Blob(41.06, 28.82, 0.035, 2600),
    Blob(41.13, 28.70, 0.040, 1100),
    Blob(41.08, 28.97, 0.020, 1800),
    Blob(40.99, 29.10, 0.030, 2600),
    Blob(40.90, 29.28, 0.035, 2000),
    Blob(41.06, 29.12, 0.040, 2000),
    Blob(41.00, 29.35, 0.040, 1500),
)
# daytime activity hubs (lat, lon)
DEFAULT_HUBS = ((41.01, 28.95), (41.04, 28.99), (40.99, 29.03), (41.07, 28.80))


@dataclass
class ScenarioSpec:
    seed: int = 20181210
    tower_count: int = 1000
    blobs: tuple = DEFAULT_BLOBS
    hubs: tuple = DEFAULT_HUBS
    calls_per_person_night: float = 6.0
    day_call_multiplier: float = 1.0
    noise: float = 0.1
    night_silent_fraction: float = 0.1
    near_duplicates: int = 20
    towers_without_coordinates: int = 10
    towers_outside: int = 15
    mislabelled_city: int = 10
    dms_fraction: float = 0.1
    non_refugee_fraction: float = 0.1
    sms_fraction: float = 0.05
    facility_count: int = 20
    period_start: date = date(2017, 1, 1)
    period_days: int = 30
    min_tower_separation: float = 0.002
    boundary: BoundaryPolygon | None = None
    partitions: dict | None = None

    def __post_init__(self):
        if self.tower_count < 1 or not self.blobs:
            raise ScenarioError("tower_count and blobs must be positive")
        if any(b.person_count < 1 or b.stddev <= 0 for b in self.blobs):
            raise ScenarioError("blob person counts and spreads must be positive")
        for name in ("noise", "night_silent_fraction", "dms_fraction", "non_refugee_fraction", "sms_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ScenarioError(f"{name} must lie in [0, 1]")
        if self.calls_per_person_night < 1:
            raise ScenarioError("calls_per_person_night must be >= 1")
        if self.boundary is None or self.partitions is None:
            b, p = default_city()
            self.boundary = self.boundary or b
            self.partitions = self.partitions or p
        centres = np.array([[b.lon, b.lat] for b in self.blobs])
        if not contains_many(self.boundary, centres[:, 0], centres[:, 1]).all():
            raise ScenarioError("every blob centre must lie inside the boundary")


@dataclass
class GeneratedScenario:
    towers: Path
    calls: Path
    boundary: Path
    partitions: Path
    facilities: Path
    ground_truth: Path
    truth: dict[str, str] = field(repr=False)


def _inside(spec, lon, lat):
    return contains_many(spec.boundary, lon, lat)


def _place_towers(spec: ScenarioSpec, rng) -> np.ndarray:
    """Tower (lon, lat) positions, denser where people live, well separated."""
    weights = np.array([b.person_count for b in spec.blobs], dtype=float)
    weights /= weights.sum()
    x0, y0, x1, y1 = spec.boundary.bounds
    placed: list[tuple[float, float]] = []
    tree_pts = np.empty((0, 2))
    while len(placed) < spec.tower_count:
        batch = 256
        from_blob = rng.random(batch) < 0.6
        bi = rng.choice(len(spec.blobs), size=batch, p=weights)
        lon = np.where(from_blob, [spec.blobs[i].lon for i in bi] + rng.normal(0, 1, batch) * [spec.blobs[i].stddev * 1.5 for i in bi],
                       rng.uniform(x0, x1, batch))
        lat = np.where(from_blob, [spec.blobs[i].lat for i in bi] + rng.normal(0, 1, batch) * [spec.blobs[i].stddev * 1.5 for i in bi],
                       rng.uniform(y0, y1, batch))
        ok = _inside(spec, lon, lat)
        for x, y in zip(lon[ok], lat[ok]):
            if len(tree_pts) and np.min(np.hypot(tree_pts[:, 0] - x, tree_pts[:, 1] - y)) < spec.min_tower_separation:
                continue
            placed.append((float(x), float(y)))
            tree_pts = np.vstack([tree_pts, [x, y]])
            if len(placed) == spec.tower_count:
                break
    return np.round(np.array(placed), 6)


def _outside_points(spec, rng, k):
    x0, y0, x1, y1 = spec.boundary.bounds
    out = []
    while len(out) < k:
        lon = rng.uniform(x0 - 0.5, x1 + 0.5)
        lat = rng.uniform(y0 - 0.3, y1 + 0.3)
        if not _inside(spec, [lon], [lat])[0]:
            out.append((round(lon, 6), round(lat, 6)))
    return out


def _fmt(value: float, axis: str, dms: bool) -> str:
    return format_dms(decimal_to_dms(value, axis)) if dms else f"{value:.6f}"


def _night_times(rng, k, start: date, days: int):
    day = rng.integers(0, days, size=k)
    # [23:00, 08:00) is nine hours starting at 23:00
    secs = 23 * 3600 + rng.integers(0, 9 * 3600, size=k)
    return day, secs


def _day_times(rng, k, days: int):
    day = rng.integers(0, days, size=k)
    secs = 8 * 3600 + rng.integers(0, 15 * 3600, size=k)
    return day, secs


def generate(spec: ScenarioSpec, out_dir) -> GeneratedScenario:
    """Write a scenario to ``out_dir``; an identical ScenarioSpec gives identical bytes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    towers = _place_towers(spec, rng)
    n_t = len(towers)
    ids = [f"S{k:05d}" for k in range(n_t)]
    tree = cKDTree(towers)

    # tower file rows: (site_id, lon, lat, city, dms)
    rows = []
    dms_flags = rng.random(n_t) < spec.dms_fraction
    bolu = set(rng.choice(n_t, size=min(spec.mislabelled_city, n_t), replace=False).tolist())
    for k, (lon, lat) in enumerate(towers):
        rows.append((ids[k], lon, lat, "Bolu" if k in bolu else "Istanbul", bool(dms_flags[k])))
    dup_of = rng.choice(n_t, size=min(spec.near_duplicates, n_t), replace=False)
    for k in sorted(dup_of.tolist()):
        lon, lat = towers[k]
        rows.append((ids[k] + "b", round(lon + 0.0001, 7), lat, "Istanbul", False))
    for k, (lon, lat) in enumerate(_outside_points(spec, rng, spec.towers_outside)):
        rows.append((f"X{k:04d}", lon, lat, "Istanbul", False))
    blank_ids = [f"N{k:04d}" for k in range(spec.towers_without_coordinates)]
    for sid in blank_ids:
        rows.append((sid, None, None, "Istanbul", False))
    rows.sort(key=lambda r: r[0])

    towers_path = out / "towers.csv"
    with open(towers_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TOWER_COLUMNS)
        for sid, lon, lat, city, dms in rows:
            if lon is None:
                w.writerow((sid, "", "", city, ""))
            else:
                w.writerow((sid, _fmt(lat, "lat", dms), _fmt(lon, "lon", dms), city, ""))

    # people and their homes
    counts = np.array([b.person_count for b in spec.blobs])
    n_p = int(counts.sum())
    blob_of = np.repeat(np.arange(len(spec.blobs)), counts)
    homes = np.empty((n_p, 2))
    for b_i, blob in enumerate(spec.blobs):
        sel = np.flatnonzero(blob_of == b_i)
        got = 0
        while got < len(sel):
            cand = rng.normal([blob.lon, blob.lat], blob.stddev, size=(len(sel) - got, 2))
            cand = cand[_inside(spec, cand[:, 0], cand[:, 1])]
            homes[sel[got:got + len(cand)]] = cand
            got += len(cand)
    home_tower = tree.query(homes)[1]
    person_ids = [f"U{k:06d}" for k in range(n_p)]

    silent = rng.random(n_p) < spec.night_silent_fraction
    n_night = np.where(silent, 0, 1 + rng.poisson(spec.calls_per_person_night - 1, size=n_p))
    n_day = rng.poisson(spec.calls_per_person_night * spec.day_call_multiplier, size=n_p)

    hubs = np.array([[lon, lat] for lat, lon in spec.hubs])
    hub_towers = tree.query(hubs, k=min(15, n_t))[1].reshape(len(hubs), -1)

    events = []  # (caller, group, callee_group, call_type, service, day, secs, site)
    owner = np.repeat(np.arange(n_p), n_night)
    noisy = rng.random(len(owner)) < spec.noise
    site = np.where(noisy, rng.integers(0, n_t, size=len(owner)), home_tower[owner])
    day, secs = _night_times(rng, len(owner), spec.period_start, spec.period_days)
    events.append((owner, site, day, secs))

    owner = np.repeat(np.arange(n_p), n_day)
    at_home = rng.random(len(owner)) < 0.4
    hub = rng.integers(0, len(hubs), size=len(owner))
    hub_site = hub_towers[hub, rng.integers(0, hub_towers.shape[1], size=len(owner))]
    site = np.where(at_home, home_tower[owner], hub_site)
    day, secs = _day_times(rng, len(owner), spec.period_days)
    events.append((owner, site, day, secs))

    owner = np.concatenate([e[0] for e in events])
    site = np.concatenate([e[1] for e in events])
    day = np.concatenate([e[2] for e in events])
    secs = np.concatenate([e[3] for e in events])
    base = datetime.combine(spec.period_start, datetime.min.time())

    call_rows = []
    call_type = rng.random(len(owner)) < 0.5
    callee_ref = rng.random(len(owner)) < 0.6
    for o, s, d, t, ct, cr in zip(owner, site, day, secs, call_type, callee_ref):
        when = base + timedelta(days=int(d), seconds=int(t))
        call_rows.append((person_ids[o], "refugee", "refugee" if cr else "non-refugee",
                          "outbound" if ct else "inbound", "voice", when, ids[s]))

    # rows the ingest filters must remove
    n_extra = int(len(call_rows) * spec.non_refugee_fraction)
    for _ in range(n_extra):
        when = base + timedelta(days=int(rng.integers(0, spec.period_days)), seconds=int(rng.integers(0, 86400)))
        call_rows.append((f"V{int(rng.integers(0, 10 * n_p)):07d}", "non-refugee", "refugee", "outbound", "voice",
                          when, ids[int(rng.integers(0, n_t))]))
    n_sms = int(len(call_rows) * spec.sms_fraction)
    for _ in range(n_sms):
        o = int(rng.integers(0, n_p))
        when = base + timedelta(days=int(rng.integers(0, spec.period_days)), seconds=int(rng.integers(0, 86400)))
        call_rows.append((person_ids[o], "refugee", "refugee", "outbound", "sms", when, ids[int(rng.integers(0, n_t))]))
    for sid in blank_ids:
        o = int(rng.integers(0, n_p))
        when = base + timedelta(days=int(rng.integers(0, spec.period_days)), seconds=int(rng.integers(0, 86400)))
        call_rows.append((person_ids[o], "refugee", "refugee", "inbound", "voice", when, sid))
    call_rows.sort(key=lambda r: (r[5], r[0], r[6]))

    calls_path = out / "calls.csv"
    with open(calls_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CALL_COLUMNS)
        for r in call_rows:
            w.writerow((*r[:5], r[5].isoformat(sep=" "), r[6]))

    truth = {person_ids[k]: ids[home_tower[k]] for k in range(n_p)}
    truth_path = out / "ground_truth.csv"
    with open(truth_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("subscriber_id", "home_site_id", "night_calls"))
        for k in range(n_p):
            w.writerow((person_ids[k], ids[home_tower[k]], int(n_night[k])))

    boundary_path = out / "boundary.geojson"
    _write_polygons(boundary_path, [spec.boundary])
    partitions_path = out / "partitions.geojson"
    _write_polygons(partitions_path, list(spec.partitions.values()))

    pick = rng.choice(n_t, size=min(spec.facility_count, n_t), replace=False)
    facilities = {"current": [[float(towers[k][1]), float(towers[k][0])] for k in sorted(pick.tolist())]}
    facilities_path = out / "facilities.json"
    facilities_path.write_text(json.dumps(facilities, indent=1) + "\n", encoding="utf-8")

    return GeneratedScenario(towers_path, calls_path, boundary_path, partitions_path, facilities_path,
                             truth_path, truth)


def _write_polygons(path, polys) -> None:
    doc = {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "properties": {"name": p.name}, "geometry": p.to_geojson_geometry()}
            for p in polys
        ],
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def read_ground_truth(path, with_night_calls_only: bool = False) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {
            r["subscriber_id"]: r["home_site_id"]
            for r in csv.DictReader(fh)
            if not with_night_calls_only or int(r["night_calls"]) > 0
        }


def tower_truth_counts(truth: dict[str, str]) -> dict[str, int]:
    out: dict[str, int] = {}
    for site in truth.values():
        out[site] = out.get(site, 0) + 1
    return out
