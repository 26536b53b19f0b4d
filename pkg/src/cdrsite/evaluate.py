"""Average per-person access cost for facility placements."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .costs import CostMatrix
from .geo import BoundaryPolygon, GeoPoint, contains
from .pmedian import PMedianInstance, evaluate_fixed

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


@dataclass
class AccessRow:
    label: str
    avg_distance_km: float
    avg_duration_min: float
    # duration to the distance-nearest facility, and vice versa
    joint_duration_min: float
    joint_distance_km: float
    open_regions: list = field(default_factory=list)


@dataclass
class AccessReport:
    rows: list[AccessRow]
    total_weight: float

    def row(self, label: str) -> AccessRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_text(self) -> str:
        head = ("Facility locations", "Travel distance (km)", "Travel duration (min)")
        body = [(r.label, f"{r.avg_distance_km:.1f}", f"{r.avg_duration_min:.0f}") for r in self.rows]
        widths = [max(len(x[c]) for x in [head, *body]) for c in range(3)]
        lines = []
        for k, row in enumerate([head, *body]):
            lines.append(f"{row[0]:<{widths[0]}}  {row[1]:>{widths[1]}}  {row[2]:>{widths[2]}}")
            if k == 0:
                lines.append("-" * len(lines[0]))
        lines.append(f"(averaged over {self.total_weight:.1f} residents)")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {"total_weight": self.total_weight, "rows": [asdict(r) for r in self.rows]}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _nearest(values: np.ndarray, open_idx: Sequence[int]) -> np.ndarray:
    cols = np.asarray(sorted(open_idx), dtype=int)
    return cols[np.argmin(values[:, cols], axis=1)]


def access_report(weights, facilities_by_scenario: Mapping[str, Sequence[int]], D: CostMatrix,
                  T: CostMatrix, labels: Sequence | None = None) -> AccessReport:
    """Weighted mean cost from each region to its nearest open facility.

    The nearest facility is picked separately for each matrix, so the
    distance and duration columns of one scenario can refer to different
    facilities.  The ``joint_*`` fields hold the cross-over figures.
    """
    w = np.asarray(weights, dtype=float)
    n = len(w)
    for m in (D, T):
        if m.n != n:
            raise EvaluationError(f"{m.kind} matrix is {m.n}x{m.n} but there are {n} regions")
    total = math.fsum(w)
    if total <= 0:
        raise EvaluationError("total resident weight must be positive")
    rows = []
    rows_idx = np.arange(n)
    dist_inst = PMedianInstance(w, D.values, 1)
    dur_inst = PMedianInstance(w, T.values, 1)
    for label, open_set in facilities_by_scenario.items():
        open_idx = sorted(set(int(j) for j in open_set))
        if not open_idx:
            raise EvaluationError(f"scenario {label!r} has no facilities")
        by_dist = evaluate_fixed(dist_inst, open_idx)
        by_dur = evaluate_fixed(dur_inst, open_idx)
        joint_dur = float(np.dot(w, T.values[rows_idx, by_dist.assignment]))
        joint_dist = float(np.dot(w, D.values[rows_idx, by_dur.assignment]))
        rows.append(AccessRow(
            label=label,
            avg_distance_km=by_dist.objective / total / 1000.0,
            avg_duration_min=by_dur.objective / total / 60.0,
            joint_duration_min=joint_dur / total / 60.0,
            joint_distance_km=joint_dist / total / 1000.0,
            open_regions=[labels[j] for j in open_idx] if labels is not None else open_idx,
        ))
    return AccessReport(rows, total)


def map_current_facilities(facility_points: Sequence[GeoPoint], centers: Sequence[GeoPoint],
                           boundary: BoundaryPolygon | None = None) -> list[int]:
    """Index of the region centre nearest (planar lon/lat) to each facility, deduplicated."""
    if not centers:
        raise EvaluationError("no regions to map facilities onto")
    xy = np.array([c.xy for c in centers])
    out = set()
    for p in facility_points:
        if boundary is not None and not contains(boundary, p):
            log.warning("facility at (%.6f, %.6f) lies outside %s", p.lat, p.lon, boundary.name)
        d2 = ((xy - np.array(p.xy)) ** 2).sum(axis=1)
        out.add(int(np.argmin(d2)))
    return sorted(out)


def load_facility_sets(path) -> dict[str, list[GeoPoint]]:
    """Read named coordinate lists: ``{"current": [[lat, lon], ...], ...}``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise EvaluationError(f"{path}: expected a mapping of name -> [[lat, lon], ...]")
    return {name: [GeoPoint(lat=float(a), lon=float(b)) for a, b in pts] for name, pts in doc.items()}
