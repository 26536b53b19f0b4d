"""Night-time residence inference from call records."""
from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import time
from typing import Iterable, Mapping

from .ingest import CallRecord


class ResidenceError(ValueError):
    pass


@dataclass(frozen=True)
class ResidenceConfig:
    night_start: time = time(23, 0)
    night_end: time = time(8, 0)

    def __post_init__(self):
        if self.night_start == self.night_end:
            raise ResidenceError("night window start and end must differ")

    def in_window(self, t: time) -> bool:
        """Half-open window ``[start, end)``, wrapping past midnight when start > end."""
        if self.night_start < self.night_end:
            return self.night_start <= t < self.night_end
        return t >= self.night_start or t < self.night_end


@dataclass
class ResidenceTable:
    """Per-subscriber tower probabilities and per-tower expected residents."""

    probabilities: dict[str, dict[str, float]]
    expected_residents: dict[str, float]
    subscribers_total: int = 0
    stats: dict = field(default_factory=dict)

    @property
    def subscribers_with_night_calls(self) -> int:
        return len(self.probabilities)

    @property
    def coverage(self) -> float:
        """Share of known subscribers with at least one night call."""
        if not self.subscribers_total:
            return 0.0
        return self.subscribers_with_night_calls / self.subscribers_total

    def total(self) -> float:
        return math.fsum(self.expected_residents.values())

    def residents(self, tower_id: str) -> float:
        return self.expected_residents.get(tower_id, 0.0)

    def write(self, path, tower_ids: Iterable[str] | None = None) -> None:
        ids = sorted(self.expected_residents) if tower_ids is None else list(tower_ids)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("tower_id", "expected_residents"))
            for t in ids:
                w.writerow((t, repr(self.residents(t))))


def read_residents(path) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {r["tower_id"]: float(r["expected_residents"]) for r in csv.DictReader(fh)}


def night_filter(calls: Iterable[CallRecord], cfg: ResidenceConfig = ResidenceConfig()) -> list[CallRecord]:
    return [c for c in calls if cfg.in_window(c.timestamp.time())]


def residence_distribution(night_calls: Iterable[CallRecord], all_subscribers: Iterable[str] | None = None) -> ResidenceTable:
    """Each subscriber's night-call frequencies as residence probabilities.

    ``all_subscribers`` (e.g. every caller in the unfiltered data) only feeds
    the coverage statistic; subscribers without night calls contribute
    nothing to the tower totals.
    """
    counts: dict[str, Counter] = defaultdict(Counter)
    for c in night_calls:
        counts[c.caller_id][c.tower_id] += 1
    if not counts:
        raise ResidenceError("no night-time calls to infer residences from")

    probabilities: dict[str, dict[str, float]] = {}
    per_tower: dict[str, list[float]] = defaultdict(list)
    for sub in sorted(counts):
        towers = counts[sub]
        total = sum(towers.values())
        probs = {t: towers[t] / total for t in sorted(towers)}
        probabilities[sub] = probs
        for t, p in probs.items():
            per_tower[t].append(p)
    expected = {t: math.fsum(ps) for t, ps in sorted(per_tower.items())}

    known = set(counts)
    if all_subscribers is not None:
        known |= set(all_subscribers)
    return ResidenceTable(probabilities, expected, len(known),
                          {"night_calls": sum(sum(c.values()) for c in counts.values())})


def mode_location(calls: Iterable[CallRecord]) -> dict[str, str]:
    """Most used tower per subscriber over the whole day; ties go to the smallest tower_id."""
    counts: dict[str, Counter] = defaultdict(Counter)
    for c in calls:
        counts[c.caller_id][c.tower_id] += 1
    return {sub: min(towers.items(), key=lambda kv: (-kv[1], kv[0]))[0] for sub, towers in sorted(counts.items())}


def home_recovery(table: ResidenceTable, truth: Mapping[str, str]) -> float:
    """Fraction of ground-truth subscribers whose top-probability tower is their home."""
    if not truth:
        return 0.0
    hits = 0
    for sub, home in truth.items():
        probs = table.probabilities.get(sub)
        if probs and min(probs.items(), key=lambda kv: (-kv[1], kv[0]))[0] == home:
            hits += 1
    return hits / len(truth)
