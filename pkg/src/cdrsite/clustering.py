"""Resident-weighted k-means over tower sites, split by geographic partition."""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geo import BoundaryPolygon, GeoPoint, contains_many, voronoi
from .ingest import TowerSite

log = logging.getLogger(__name__)


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    total_k: int = 200
    seed: int = 0
    max_iters: int = 300
    tol: float = 1e-7

    def __post_init__(self):
        if self.total_k < 1:
            raise ClusteringError("total_k must be >= 1")
        if self.max_iters < 1:
            raise ClusteringError("max_iters must be >= 1")


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia_history: list[float]
    iterations: int
    converged: bool

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


@dataclass
class ResidentialRegion:
    region_id: int
    center: GeoPoint
    weight: float
    partition: str
    member_tower_ids: tuple[str, ...]
    polygon: object = field(default=None, repr=False)


def allocate_k(total_k: int, activity_counts: Mapping[str, float]) -> dict[str, int]:
    """Split ``total_k`` across partitions by largest remainder, at least one each."""
    names = sorted(activity_counts)
    if not names:
        raise ClusteringError("no partitions to allocate clusters to")
    if total_k < len(names):
        raise ClusteringError(f"total_k={total_k} smaller than the number of partitions ({len(names)})")
    counts = np.array([float(activity_counts[p]) for p in names])
    if np.any(counts <= 0) or not np.all(np.isfinite(counts)):
        raise ClusteringError("activity counts must be positive")
    quotas = total_k * counts / counts.sum()
    alloc = np.floor(quotas).astype(int)
    remainders = quotas - alloc
    # stable sort keeps name order among equal remainders
    for k in np.argsort(-remainders, kind="stable")[: total_k - int(alloc.sum())]:
        alloc[k] += 1
    while np.any(alloc < 1):
        alloc[int(np.argmax(alloc))] -= 1
        alloc[int(np.argmin(alloc))] += 1
    return {p: int(a) for p, a in zip(names, alloc)}


def weighted_inertia(points: np.ndarray, weights: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    diff = points - centroids[labels]
    return float(np.dot(weights, np.einsum("ij,ij->i", diff, diff)))


def _sq_dist(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _assign(points, centroids):
    d2 = _sq_dist(points, centroids)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(points)), labels]


def _draw(cum: np.ndarray, rng: np.random.Generator) -> int:
    # inverse-CDF draw: replicating a point w times leaves the outcome unchanged
    u = rng.random() * cum[-1]
    return int(min(np.searchsorted(cum, u, side="right"), len(cum) - 1))


def kmeanspp_init(points: np.ndarray, weights: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Weighted k-means++ seeding."""
    n = len(points)
    chosen = [_draw(np.cumsum(weights), rng)]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        score = weights * d2
        if score.sum() > 0:
            j = _draw(np.cumsum(score), rng)
        elif d2.sum() > 0:
            # every weighted point is already a centre; spread over the rest
            j = _draw(np.cumsum(d2), rng)
        else:
            j = next(i for i in range(n) if i not in chosen)
        chosen.append(j)
        d2 = np.minimum(d2, ((points - points[j]) ** 2).sum(axis=1))
    return points[chosen].astype(float)


def weighted_kmeans(points, weights, k: int, cfg: ClusterConfig = ClusterConfig(), init=None,
                    rng: np.random.Generator | None = None) -> KMeansResult:
    """Lloyd iterations with weighted centroid updates.

    ``points`` is an ``(n, 2)`` array of (lon, lat).  Zero-weight points are
    assigned but do not move centroids.  A centroid whose cluster carries no
    weight is moved to the point that currently contributes most to the
    inertia, which never increases the objective.
    """
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = len(pts)
    if pts.ndim != 2 or len(w) != n:
        raise ClusteringError("points and weights do not match")
    if not 1 <= k <= n:
        raise ClusteringError(f"k={k} must lie in [1, {n}]")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ClusteringError("weights must be finite and non-negative")
    if w.sum() == 0:
        warnings.warn("all weights are zero; falling back to unweighted k-means", RuntimeWarning, stacklevel=2)
        w = np.ones(n)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    centroids = np.array(init, dtype=float) if init is not None else kmeanspp_init(pts, w, k, rng)
    if centroids.shape != (k, pts.shape[1]):
        raise ClusteringError(f"init must have shape {(k, pts.shape[1])}")

    labels, d2 = _assign(pts, centroids)
    history = [float(np.dot(w, d2))]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        mass = np.bincount(labels, weights=w, minlength=k)
        sums = np.stack([np.bincount(labels, weights=w * pts[:, c], minlength=k) for c in range(pts.shape[1])], axis=1)
        new = centroids.copy()
        live = mass > 0
        new[live] = sums[live] / mass[live, None]
        if not live.all():
            contrib = w * ((pts - new[labels]) ** 2).sum(axis=1)
            for c in np.flatnonzero(~live):
                j = int(np.argmax(contrib))
                if contrib[j] <= 0:
                    break
                new[c] = pts[j]
                contrib[j] = 0.0
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        new_labels, d2 = _assign(pts, centroids)
        history.append(float(np.dot(w, d2)))
        stable = np.array_equal(new_labels, labels)
        labels = new_labels
        if shift < cfg.tol or stable:
            converged = True
            break
    return KMeansResult(centroids, labels, history, it, converged)


def partition_activity(calls, towers: Sequence[TowerSite]) -> dict[str, int]:
    """Number of calls per partition, from all (not only night) calls."""
    side = {t.tower_id: t.partition for t in towers}
    out: dict[str, int] = {}
    for c in calls:
        p = side.get(c.tower_id)
        if p is not None:
            out[p] = out.get(p, 0) + 1
    return dict(sorted(out.items()))


def build_regions(towers: Sequence[TowerSite], residents: Mapping[str, float], cfg: ClusterConfig,
                  activity_counts: Mapping[str, float], boundary: BoundaryPolygon | None = None) -> list[ResidentialRegion]:
    """Cluster towers into residential regions, partition by partition.

    Region ids run over partitions in name order.  When ``boundary`` is given
    each region gets its Voronoi cell among all region centres.
    """
    alloc = allocate_k(cfg.total_k, activity_counts)
    by_part: dict[str, list[TowerSite]] = {p: [] for p in alloc}
    for t in towers:
        if t.partition not in by_part:
            raise ClusteringError(f"tower {t.tower_id} in partition {t.partition!r} with no activity count")
        by_part[t.partition].append(t)

    for part, k in sorted(alloc.items()):
        if not by_part[part]:
            raise ClusteringError(f"partition {part!r} has no towers")
        if k > len(by_part[part]):
            raise ClusteringError(f"partition {part!r}: {k} clusters requested for {len(by_part[part])} towers")

    regions: list[ResidentialRegion] = []
    for pi, (part, k) in enumerate(sorted(alloc.items())):
        members = sorted(by_part[part], key=lambda t: t.tower_id)
        pts = np.array([t.location.xy for t in members])
        w = np.array([residents.get(t.tower_id, 0.0) for t in members])
        res = weighted_kmeans(pts, w, k, cfg, rng=np.random.default_rng([cfg.seed, pi]))
        if not res.converged:
            log.warning("k-means for %s stopped at max_iters=%d", part, cfg.max_iters)
        for c in range(k):
            idx = np.flatnonzero(res.labels == c)
            ids = tuple(members[i].tower_id for i in idx)
            weight = math.fsum(w[i] for i in idx)
            lon, lat = res.centroids[c]
            regions.append(ResidentialRegion(len(regions), GeoPoint(lat=float(lat), lon=float(lon)),
                                             weight, part, ids))
    if boundary is not None:
        attach_polygons(regions, boundary)
    return regions


def attach_polygons(regions: Sequence[ResidentialRegion], boundary: BoundaryPolygon) -> None:
    centers = [r.center for r in regions]
    lons = np.array([c.lon for c in centers])
    lats = np.array([c.lat for c in centers])
    outside = ~contains_many(boundary, lons, lats)
    if outside.any():
        log.warning("%d region centre(s) fall outside the boundary", int(outside.sum()))
    diagram = voronoi(centers, boundary, require_inside=False)
    for r, cell in zip(regions, diagram.cells):
        r.polygon = cell


REGION_COLUMNS = ("region_id", "lat", "lon", "weight", "partition", "n_towers")


def write_regions(regions: Sequence[ResidentialRegion], path, members_path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REGION_COLUMNS)
        for r in regions:
            w.writerow((r.region_id, repr(r.center.lat), repr(r.center.lon), repr(r.weight), r.partition,
                        len(r.member_tower_ids)))
    with open(members_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("tower_id", "region_id"))
        for r in regions:
            for t in r.member_tower_ids:
                w.writerow((t, r.region_id))


def read_regions(path, members_path=None) -> list[ResidentialRegion]:
    members: dict[int, list[str]] = {}
    if members_path is not None:
        with open(members_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                members.setdefault(int(row["region_id"]), []).append(row["tower_id"])
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            ResidentialRegion(int(r["region_id"]), GeoPoint(lat=float(r["lat"]), lon=float(r["lon"])),
                              float(r["weight"]), r["partition"], tuple(members.get(int(r["region_id"]), ())))
            for r in csv.DictReader(fh)
        ]
