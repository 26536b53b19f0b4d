"""Travel-cost matrices between region centres.

Costs come from a pluggable provider.  Two ship with the package: an
offline haversine/constant-speed model and a generic HTTP distance-matrix
client.  Cells a provider cannot price are recorded in ``missing_mask`` and
filled with the mean of the known off-diagonal cells.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .geo import GeoPoint, haversine_array

log = logging.getLogger(__name__)

DISTANCE = "distance_m"
DURATION = "duration_s"
CACHE_MAGIC = b"CDRSITE-COSTMATRIX"
CACHE_VERSION = 1


class CostMatrixError(ValueError):
    pass


class CacheError(CostMatrixError):
    pass


class ProviderError(RuntimeError):
    pass


@dataclass(frozen=True)
class CostMatrix:
    kind: str
    values: np.ndarray
    missing_mask: np.ndarray
    provider: str = ""
    departure: datetime | None = None

    def __post_init__(self):
        if self.kind not in (DISTANCE, DURATION):
            raise CostMatrixError(f"unknown matrix kind {self.kind!r}")
        v = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.missing_mask, dtype=bool)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise CostMatrixError(f"cost matrix must be square, got {v.shape}")
        if mask.shape != v.shape:
            raise CostMatrixError("missing_mask shape does not match values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "missing_mask", mask)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def check_dimension(self, n: int) -> None:
        if self.n != n:
            raise CostMatrixError(f"{self.kind} matrix is {self.n}x{self.n}, expected {n}x{n}")

    def is_complete(self) -> bool:
        return bool(np.all(np.isfinite(self.values)) and np.all(self.values >= 0)
                    and np.all(np.diag(self.values) == 0))

    def __eq__(self, other):
        if not isinstance(other, CostMatrix):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.provider == other.provider
            and self.departure == other.departure
            and np.array_equal(self.values, other.values, equal_nan=True)
            and np.array_equal(self.missing_mask, other.missing_mask)
        )


class CostProvider(Protocol):
    """Prices ordered (origin, destination) pairs.

    ``query`` returns two ``len(origins) x len(destinations)`` arrays,
    distance in metres and duration in seconds, with NaN for cells the
    provider could not price.  It may raise :class:`ProviderError` for a
    whole batch.
    """

    name: str
    max_origins: int | None
    max_destinations: int | None

    def query(self, origins: Sequence[GeoPoint], destinations: Sequence[GeoPoint],
              departure: datetime | None) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass
class SyntheticProvider:
    """Great-circle distance travelled at a constant speed."""

    speed_mps: float = 5.0
    name: str = "synthetic"
    max_origins: int | None = None
    max_destinations: int | None = None

    def __post_init__(self):
        if not self.speed_mps > 0:
            raise ValueError("speed must be positive")

    def query(self, origins, destinations, departure=None):
        olat = np.array([p.lat for p in origins])[:, None]
        olon = np.array([p.lon for p in origins])[:, None]
        dlat = np.array([p.lat for p in destinations])[None, :]
        dlon = np.array([p.lon for p in destinations])[None, :]
        dist = haversine_array(olat, olon, dlat, dlon)
        return dist, dist / self.speed_mps


def synthetic_provider(speed_mps: float) -> SyntheticProvider:
    return SyntheticProvider(speed_mps=speed_mps, name=f"synthetic:{speed_mps:g}mps")


class TokenBucket:
    """Blocking token bucket; ``clock`` and ``sleep`` are injectable for tests."""

    def __init__(self, rate: float, capacity: float | None = None,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self.clock = clock
        self.sleep = sleep
        self.tokens = self.capacity
        self.stamp = clock()
        self._lock = threading.Lock()

    def acquire(self, tokens: float = 1.0) -> None:
        if tokens > self.capacity:
            raise ValueError("request exceeds bucket capacity")
        with self._lock:
            now = self.clock()
            self.tokens = min(self.capacity, self.tokens + (now - self.stamp) * self.rate)
            self.stamp = now
            if self.tokens >= tokens:
                self.tokens -= tokens
                return
            # Wait out the deficit, then book the bucket as drained at now + wait.
            # Re-reading the clock in a loop can spin forever when the deficit
            # is below the clock's floating-point resolution.
            wait = (tokens - self.tokens) / self.rate
            self.sleep(wait)
            self.tokens = 0.0
            self.stamp = now + wait


def _dig(obj, path: str):
    for part in path.split("."):
        if not isinstance(obj, dict) or part not in obj:
            return None
        obj = obj[part]
    return obj


@dataclass
class HttpDistanceMatrixProvider:
    """Client for distance-matrix style web services.

    Defaults follow the common ``rows[i].elements[j]`` response layout with
    ``distance.value`` (m) and ``duration.value`` (s).  The API key is read
    from the environment variable named by ``key_env``; it is never taken
    from the command line.
    """

    endpoint: str
    key_env: str = "DISTANCE_MATRIX_API_KEY"
    mode: str = "transit"
    max_origins: int | None = 10
    max_destinations: int | None = 10
    requests_per_second: float = 10.0
    timeout: float = 30.0
    rows_field: str = "rows"
    elements_field: str = "elements"
    distance_field: str = "distance.value"
    duration_field: str = "duration.value"
    status_field: str = "status"
    ok_status: str = "OK"
    name: str = "http"
    session: object = None
    limiter: TokenBucket | None = None
    extra_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.session is None:
            import requests

            self.session = requests.Session()
        if self.limiter is None:
            self.limiter = TokenBucket(self.requests_per_second)

    def _params(self, origins, destinations, departure):
        fmt = lambda pts: "|".join(f"{p.lat:.7f},{p.lon:.7f}" for p in pts)  # noqa: E731
        params = {"origins": fmt(origins), "destinations": fmt(destinations), "mode": self.mode}
        if departure is not None:
            params["departure_time"] = str(int(departure.timestamp()))
        key = os.environ.get(self.key_env)
        if key:
            params["key"] = key
        params.update(self.extra_params)
        return params

    def query(self, origins, destinations, departure=None):
        self.limiter.acquire()
        try:
            resp = self.session.get(self.endpoint, params=self._params(origins, destinations, departure),
                                    timeout=self.timeout)
            resp.raise_for_status()
            doc = resp.json()
        except Exception as exc:  # network, HTTP status or JSON decoding
            raise ProviderError(f"{self.name}: request failed: {exc}") from exc
        rows = doc.get(self.rows_field) if isinstance(doc, dict) else None
        if not isinstance(rows, list) or len(rows) != len(origins):
            raise ProviderError(f"{self.name}: malformed response")
        dist = np.full((len(origins), len(destinations)), np.nan)
        dur = np.full_like(dist, np.nan)
        for i, row in enumerate(rows):
            elements = (row or {}).get(self.elements_field) or []
            for j, el in enumerate(elements[: len(destinations)]):
                if self.status_field and _dig(el, self.status_field) != self.ok_status:
                    continue
                dv, tv = _dig(el, self.distance_field), _dig(el, self.duration_field)
                if isinstance(dv, (int, float)) and dv >= 0:
                    dist[i, j] = dv
                if isinstance(tv, (int, float)) and tv >= 0:
                    dur[i, j] = tv
        return dist, dur


def _blocks(n: int, size: int | None):
    size = n if not size else size
    return [(s, min(n, s + size)) for s in range(0, n, size)]


def build_matrices(centers: Sequence[GeoPoint], provider: CostProvider, departure: datetime | None = None,
                   workers: int = 1) -> tuple[CostMatrix, CostMatrix]:
    """Query every ordered pair of centres and return imputed (distance, duration)."""
    n = len(centers)
    if n < 2:
        raise CostMatrixError("need at least two centres")
    dist = np.full((n, n), np.nan)
    dur = np.full((n, n), np.nan)
    jobs = [(o, d) for o in _blocks(n, provider.max_origins) for d in _blocks(n, provider.max_destinations)]
    failures = 0

    def run(job):
        (o0, o1), (d0, d1) = job
        return job, provider.query(centers[o0:o1], centers[d0:d1], departure)

    def collect(results):
        nonlocal failures
        for job, res in results:
            (o0, o1), (d0, d1) = job
            if res is None:
                failures += 1
                continue
            dist[o0:o1, d0:d1] = res[0]
            dur[o0:o1, d0:d1] = res[1]

    def guarded(job):
        try:
            return run(job)
        except ProviderError as exc:
            log.warning("cost batch %s failed: %s", job, exc)
            return job, None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            collect(list(pool.map(guarded, jobs)))
    else:
        collect(guarded(j) for j in jobs)
    if failures == len(jobs):
        raise ProviderError(f"all {failures} batches failed for provider {provider.name!r}")

    eye = np.eye(n, dtype=bool)
    out = []
    for kind, vals in ((DISTANCE, dist), (DURATION, dur)):
        vals[eye] = 0.0
        mask = ~np.isfinite(vals) | (vals < 0)
        vals[mask] = np.nan
        out.append(impute_missing(CostMatrix(kind, vals, mask, provider.name, departure)))
    return out[0], out[1]


def impute_missing(m: CostMatrix) -> CostMatrix:
    """Fill missing off-diagonal cells with the mean of the known off-diagonal cells."""
    n = m.n
    off = ~np.eye(n, dtype=bool)
    known = off & ~m.missing_mask
    if not known.any():
        raise CostMatrixError(f"{m.kind}: every off-diagonal cell is missing; cannot impute")
    vals = m.values.copy()
    fill = off & m.missing_mask
    if fill.any():
        vals[fill] = float(np.mean(m.values[known]))
    np.fill_diagonal(vals, 0.0)
    return replace(m, values=vals)


def save_matrix(m: CostMatrix, path: str | Path) -> None:
    """Write a versioned, checksummed binary cache file."""
    values = np.ascontiguousarray(m.values, dtype="<f8").tobytes()
    mask = np.ascontiguousarray(m.missing_mask, dtype=np.uint8).tobytes()
    payload = values + mask
    header = {
        "version": CACHE_VERSION,
        "kind": m.kind,
        "n": m.n,
        "provider": m.provider,
        "departure": m.departure.isoformat() if m.departure else None,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = CACHE_MAGIC + b"\n" + json.dumps(header, sort_keys=True).encode() + b"\n" + payload
    Path(path).write_bytes(blob)


def load_matrix(path: str | Path, expected_n: int | None = None) -> CostMatrix:
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 2)
    if len(parts) != 3 or parts[0] != CACHE_MAGIC:
        raise CacheError(f"{path}: not a cost-matrix cache file")
    try:
        header = json.loads(parts[1])
    except ValueError as exc:
        raise CacheError(f"{path}: corrupt header") from exc
    if header.get("version") != CACHE_VERSION:
        raise CacheError(f"{path}: cache version {header.get('version')} unsupported (expected {CACHE_VERSION})")
    n = int(header["n"])
    payload = parts[2]
    if len(payload) != n * n * 9 or hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CacheError(f"{path}: truncated or corrupt payload")
    values = np.frombuffer(payload[: n * n * 8], dtype="<f8").reshape(n, n).astype(float)
    mask = np.frombuffer(payload[n * n * 8:], dtype=np.uint8).reshape(n, n).astype(bool)
    dep = datetime.fromisoformat(header["departure"]) if header.get("departure") else None
    m = CostMatrix(header["kind"], values, mask, header.get("provider", ""), dep)
    if expected_n is not None:
        m.check_dimension(expected_n)
    return m


def cache_roundtrip(m: CostMatrix, path: str | Path) -> CostMatrix:
    save_matrix(m, path)
    return load_matrix(path)


def missing_fraction(m: CostMatrix) -> float:
    off = ~np.eye(m.n, dtype=bool)
    return float(m.missing_mask[off].mean()) if m.n > 1 else 0.0
