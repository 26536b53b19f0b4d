"""Minimal GeoJSON feature-collection writing and checking."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from shapely.geometry import mapping
from shapely.geometry.base import BaseGeometry

from .geo import GeoPoint


class GeoJSONError(ValueError):
    pass


def point_feature(p: GeoPoint, properties: dict) -> dict:
    return {"type": "Feature", "geometry": {"type": "Point", "coordinates": [p.lon, p.lat]},
            "properties": properties}


def _plain(obj):
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def polygon_feature(geom: BaseGeometry, properties: dict) -> dict:
    if geom is None or geom.is_empty or geom.geom_type not in ("Polygon", "MultiPolygon"):
        geometry = None
    else:
        geometry = _plain(mapping(geom))
    return {"type": "Feature", "geometry": geometry, "properties": properties}


def write_collection(path, features: Iterable[dict], name: str | None = None) -> None:
    doc = {"type": "FeatureCollection"}
    if name:
        doc["name"] = name
    doc["features"] = list(features)
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def _check_ring(ring, where):
    if len(ring) < 4:
        raise GeoJSONError(f"{where}: ring has fewer than 4 positions")
    if list(ring[0]) != list(ring[-1]):
        raise GeoJSONError(f"{where}: ring is not closed")


def validate_collection(path, required: Iterable[str] = ()) -> int:
    """Check a feature collection; returns the feature count."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise GeoJSONError(f"{path}: not JSON: {exc}") from exc
    if doc.get("type") != "FeatureCollection" or not isinstance(doc.get("features"), list):
        raise GeoJSONError(f"{path}: not a FeatureCollection")
    required = list(required)
    for k, feat in enumerate(doc["features"]):
        where = f"{path}#{k}"
        if feat.get("type") != "Feature":
            raise GeoJSONError(f"{where}: not a Feature")
        props = feat.get("properties") or {}
        missing = [r for r in required if r not in props]
        if missing:
            raise GeoJSONError(f"{where}: missing properties {missing}")
        geom = feat.get("geometry")
        if geom is None:
            continue
        gtype, coords = geom.get("type"), geom.get("coordinates")
        if gtype == "Point":
            if len(coords) != 2:
                raise GeoJSONError(f"{where}: bad point")
        elif gtype == "Polygon":
            for ring in coords:
                _check_ring(ring, where)
        elif gtype == "MultiPolygon":
            for poly in coords:
                for ring in poly:
                    _check_ring(ring, where)
        else:
            raise GeoJSONError(f"{where}: unexpected geometry {gtype!r}")
    return len(doc["features"])
