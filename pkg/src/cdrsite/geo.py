"""Coordinates, distances, point-in-polygon and bounded Voronoi cells.

All planar computations work on raw ``(lon, lat)`` pairs.  Haversine is only
used where physical metres are needed.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import Delaunay, QhullError
from shapely.geometry import Polygon
from shapely.geometry.base import BaseGeometry
from shapely.ops import unary_union

EARTH_RADIUS_M = 6_371_000.0


class GeometryError(ValueError):
    """Invalid geometric input."""


@dataclass(frozen=True, slots=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise GeometryError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise GeometryError(f"latitude {self.lat} out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise GeometryError(f"longitude {self.lon} out of range")

    @property
    def xy(self) -> tuple[float, float]:
        return (self.lon, self.lat)


@dataclass(frozen=True, slots=True)
class DmsCoordinate:
    degrees: int
    minutes: int
    seconds: float
    hemisphere: str

    def __post_init__(self):
        if self.hemisphere not in ("N", "S", "E", "W"):
            raise GeometryError(f"bad hemisphere {self.hemisphere!r}")
        if self.degrees < 0:
            raise GeometryError("degrees must be non-negative; sign goes in the hemisphere")
        if not 0 <= self.minutes < 60:
            raise GeometryError(f"minutes {self.minutes} out of [0, 60)")
        if not (math.isfinite(self.seconds) and 0.0 <= self.seconds < 60.0):
            raise GeometryError(f"seconds {self.seconds} out of [0, 60)")
        limit = 90 if self.hemisphere in ("N", "S") else 180
        if self.degrees + self.minutes / 60.0 + self.seconds / 3600.0 > limit:
            raise GeometryError(f"{self} exceeds {limit} degrees")


def dms_to_decimal(c: DmsCoordinate) -> float:
    sign = -1.0 if c.hemisphere in ("S", "W") else 1.0
    return sign * (c.degrees + c.minutes / 60.0 + c.seconds / 3600.0)


def decimal_to_dms(value: float, axis: str = "lat") -> DmsCoordinate:
    """Inverse of :func:`dms_to_decimal`; ``axis`` picks N/S or E/W."""
    if axis == "lat":
        hemi = "S" if value < 0 else "N"
    elif axis == "lon":
        hemi = "W" if value < 0 else "E"
    else:
        raise ValueError(f"axis must be 'lat' or 'lon', got {axis!r}")
    a = abs(value)
    degrees = int(a)
    rem = (a - degrees) * 60.0
    minutes = int(rem)
    seconds = (rem - minutes) * 60.0
    # float noise can push seconds to 60.0
    if seconds >= 60.0:
        seconds = 0.0
        minutes += 1
    if minutes >= 60:
        minutes = 0
        degrees += 1
    return DmsCoordinate(degrees, minutes, seconds, hemi)


_DMS_RE = re.compile(
    r"""^\s*(?P<d>\d+)\s*[°d:\s]\s*(?P<m>\d+)\s*['m:\s]\s*(?P<s>\d+(?:\.\d*)?)\s*(?:"|''|s)?\s*(?P<h>[NSEWnsew])\s*$"""
)


def parse_dms(text: str) -> DmsCoordinate:
    """Parse strings such as ``41°00'36.5"N`` or ``41 0 36.5 N``."""
    m = _DMS_RE.match(text)
    if m is None:
        raise GeometryError(f"not a DMS coordinate: {text!r}")
    return DmsCoordinate(int(m["d"]), int(m["m"]), float(m["s"]), m["h"].upper())


def format_dms(c: DmsCoordinate) -> str:
    return f"{c.degrees}°{c.minutes:02d}'{c.seconds:.6f}\"{c.hemisphere}"


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    return float(haversine_array(a.lat, a.lon, b.lat, b.lon))


def haversine_array(lat1, lon1, lat2, lon2):
    """Broadcasting great-circle distance in metres."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dp / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


@dataclass(frozen=True)
class BoundaryPolygon:
    """A named region made of closed rings, interpreted with the even-odd rule.

    Holes and multi-part regions are expressed simply as extra rings.
    """

    name: str
    rings: tuple[tuple[GeoPoint, ...], ...]

    def __post_init__(self):
        if not self.rings:
            raise GeometryError(f"boundary {self.name!r} has no rings")
        for ring in self.rings:
            if len(ring) < 4:
                raise GeometryError(f"boundary {self.name!r}: ring with {len(ring)} points (need >= 4)")
            if ring[0] != ring[-1]:
                raise GeometryError(f"boundary {self.name!r}: ring is not closed")

    @classmethod
    def from_lonlat(cls, name: str, rings: Iterable[Sequence[Sequence[float]]]) -> "BoundaryPolygon":
        return cls(name, tuple(tuple(GeoPoint(lat=float(y), lon=float(x)) for x, y in ring) for ring in rings))

    def ring_arrays(self) -> list[np.ndarray]:
        return [np.array([p.xy for p in ring], dtype=float) for ring in self.rings]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        xy = np.vstack(self.ring_arrays())
        return (float(xy[:, 0].min()), float(xy[:, 1].min()), float(xy[:, 0].max()), float(xy[:, 1].max()))

    def to_shapely(self) -> BaseGeometry:
        geom = None
        for arr in self.ring_arrays():
            part = Polygon(arr)
            geom = part if geom is None else geom.symmetric_difference(part)
        return geom

    @property
    def area(self) -> float:
        return float(self.to_shapely().area)

    def to_geojson_geometry(self) -> dict:
        return {
            "type": "Polygon",
            "coordinates": [[[p.lon, p.lat] for p in ring] for ring in self.rings],
        }


def load_boundary(path: str | Path, name: str | None = None) -> BoundaryPolygon:
    """Read a boundary from a GeoJSON file.

    Accepts a bare Polygon/MultiPolygon geometry, a Feature, or a
    FeatureCollection.  With a collection, ``name`` selects the feature whose
    ``properties.name`` matches; otherwise the file must hold exactly one
    feature.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    feature = doc
    if doc.get("type") == "FeatureCollection":
        feats = doc.get("features", [])
        if name is not None:
            feats = [f for f in feats if (f.get("properties") or {}).get("name") == name]
        if len(feats) != 1:
            raise GeometryError(f"{path}: expected one boundary feature (name={name!r}), found {len(feats)}")
        feature = feats[0]
    if feature.get("type") == "Feature":
        label = (feature.get("properties") or {}).get("name") or name or Path(path).stem
        geometry = feature["geometry"]
    else:
        label = name or Path(path).stem
        geometry = feature
    gtype = geometry.get("type")
    if gtype == "Polygon":
        rings = geometry["coordinates"]
    elif gtype == "MultiPolygon":
        rings = [ring for poly in geometry["coordinates"] for ring in poly]
    else:
        raise GeometryError(f"{path}: unsupported geometry type {gtype!r}")
    return BoundaryPolygon.from_lonlat(label, rings)


def _on_segment(px, py, x1, y1, x2, y2, tol):
    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    scale = np.maximum(np.hypot(x2 - x1, y2 - y1), 1e-300)
    within = (
        (px >= np.minimum(x1, x2) - tol) & (px <= np.maximum(x1, x2) + tol)
        & (py >= np.minimum(y1, y2) - tol) & (py <= np.maximum(y1, y2) + tol)
    )
    return (np.abs(cross) / scale <= tol) & within


def contains_many(poly: BoundaryPolygon, lons, lats, tol: float = 1e-12) -> np.ndarray:
    """Vectorised even-odd ray casting; points on an edge count as inside."""
    px = np.asarray(lons, dtype=float)
    py = np.asarray(lats, dtype=float)
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    for ring in poly.ring_arrays():
        for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
            on_edge |= _on_segment(px, py, x1, y1, x2, y2, tol)
            if y1 == y2:
                continue
            crosses = (y1 > py) != (y2 > py)
            x_at = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (px < x_at)
    return inside | on_edge


def contains(poly: BoundaryPolygon, p: GeoPoint) -> bool:
    return bool(contains_many(poly, [p.lon], [p.lat])[0])


@dataclass(frozen=True)
class VoronoiDiagram:
    sites: tuple[GeoPoint, ...]
    cells: tuple[BaseGeometry, ...]
    clip: BoundaryPolygon

    def areas(self) -> np.ndarray:
        return np.array([c.area for c in self.cells])


def _clip_halfplane(poly: list[tuple[float, float]], normal, offset) -> list[tuple[float, float]]:
    """Keep the part of a convex polygon where ``normal . x <= offset``."""
    out: list[tuple[float, float]] = []
    nx, ny = normal
    n = len(poly)
    for k in range(n):
        cur = poly[k]
        nxt = poly[(k + 1) % n]
        fc = nx * cur[0] + ny * cur[1] - offset
        fn = nx * nxt[0] + ny * nxt[1] - offset
        if fc <= 0:
            out.append(cur)
        if (fc < 0 < fn) or (fn < 0 < fc):
            t = fc / (fc - fn)
            out.append((cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])))
    return out


def _neighbour_lists(xy: np.ndarray) -> list[np.ndarray]:
    n = len(xy)
    everyone = [np.delete(np.arange(n), i) for i in range(n)]
    if n < 4:
        return everyone
    try:
        tri = Delaunay(xy)
    except QhullError:
        return everyone
    indptr, indices = tri.vertex_neighbor_vertices
    nbrs = [indices[indptr[i]:indptr[i + 1]] for i in range(n)]
    # coplanar points dropped by qhull get no neighbours; fall back for those
    return [nb if len(nb) else everyone[i] for i, nb in enumerate(nbrs)]


def _areal(geom: BaseGeometry) -> BaseGeometry:
    """Drop points/lines that clipping can leave alongside polygon parts."""
    if geom.geom_type in ("Polygon", "MultiPolygon"):
        return geom
    parts = [g for g in getattr(geom, "geoms", []) if g.geom_type in ("Polygon", "MultiPolygon")]
    return unary_union(parts) if parts else Polygon()


def voronoi(sites: Sequence[GeoPoint], clip: BoundaryPolygon, require_inside: bool = True) -> VoronoiDiagram:
    """Voronoi cells of ``sites`` on the lon/lat plane, clipped to ``clip``.

    With ``require_inside=False`` sites outside the clip are tolerated; their
    cells may then be empty or not contain the site.
    """
    if not sites:
        raise GeometryError("voronoi needs at least one site")
    xy = np.array([p.xy for p in sites], dtype=float)
    if len(np.unique(xy, axis=0)) != len(xy):
        raise GeometryError("duplicate Voronoi sites; deduplicate towers first")
    outside = ~contains_many(clip, xy[:, 0], xy[:, 1])
    if require_inside and outside.any():
        raise GeometryError(f"{int(outside.sum())} site(s) lie outside boundary {clip.name!r}")

    clip_geom = clip.to_shapely()
    x0, y0, x1, y1 = clip.bounds
    pad = max(x1 - x0, y1 - y0, 1e-9)
    frame = [(x0 - pad, y0 - pad), (x1 + pad, y0 - pad), (x1 + pad, y1 + pad), (x0 - pad, y1 + pad)]

    cells = []
    for i, nbrs in enumerate(_neighbour_lists(xy)):
        poly = frame
        si = xy[i]
        for j in nbrs:
            sj = xy[j]
            normal = sj - si
            offset = float(normal @ ((si + sj) / 2.0))
            poly = _clip_halfplane(poly, normal, offset)
            if len(poly) < 3:
                break
        cell = Polygon(poly) if len(poly) >= 3 else Polygon()
        cells.append(_areal(cell.intersection(clip_geom)))
    return VoronoiDiagram(tuple(sites), tuple(cells), clip)
