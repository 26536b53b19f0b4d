from datetime import datetime, time

import pytest

from cdrsite.ingest import CallRecord
from cdrsite.residence import (
    ResidenceConfig,
    ResidenceError,
    home_recovery,
    mode_location,
    night_filter,
    read_residents,
    residence_distribution,
)


def call(sub, tower, hh=23, mm=30, day=1):
    return CallRecord(sub, "refugee", datetime(2017, 1, day, hh, mm), tower, "outbound")


class TestNightFilter:
    @pytest.mark.parametrize("hh,mm,kept", [(23, 0, True), (8, 0, False), (3, 30, True),
                                            (22, 59, False), (7, 59, True), (12, 0, False)])
    def test_window_edges(self, hh, mm, kept):
        assert bool(night_filter([call("u", "A", hh, mm)])) is kept

    def test_non_wrapping_window(self):
        cfg = ResidenceConfig(night_start=time(1, 0), night_end=time(5, 0))
        assert [c.timestamp.hour for c in night_filter([call("u", "A", h) for h in (0, 1, 4, 5)], cfg)] == [1, 4]

    def test_equal_bounds_rejected(self):
        with pytest.raises(ResidenceError):
            ResidenceConfig(night_start=time(1, 0), night_end=time(1, 0))


class TestDistribution:
    def test_frequency_ratio(self):
        t = residence_distribution([call("u", "A")] * 3 + [call("u", "B")])
        assert t.probabilities["u"] == {"A": 0.75, "B": 0.25}

    def test_single_tower_subscriber(self):
        t = residence_distribution([call("u", "A"), call("u", "A", day=2)])
        assert t.residents("A") == 1.0

    def test_two_split_subscribers(self):
        t = residence_distribution([call("u", "A"), call("u", "B"), call("v", "A"), call("v", "B")])
        assert t.residents("A") == 1.0 and t.residents("B") == 1.0

    def test_mass_equals_subscriber_count(self, rng):
        calls = [call(f"u{rng.integers(30)}", f"T{rng.integers(7)}") for _ in range(400)]
        t = residence_distribution(calls)
        assert t.total() == pytest.approx(len({c.caller_id for c in calls}), abs=1e-9)
        for probs in t.probabilities.values():
            assert sum(probs.values()) == pytest.approx(1.0, abs=1e-12)

    def test_coverage_counts_silent_subscribers(self):
        t = residence_distribution([call("u", "A")], all_subscribers={"u", "v"})
        assert t.coverage == 0.5

    def test_empty_rejected(self):
        with pytest.raises(ResidenceError):
            residence_distribution([])

    def test_write_read(self, tmp_path):
        t = residence_distribution([call("u", "A")] * 3 + [call("u", "B")])
        t.write(tmp_path / "r.csv", ["A", "B", "C"])
        assert read_residents(tmp_path / "r.csv") == {"A": 0.75, "B": 0.25, "C": 0.0}


class TestModeLocation:
    def test_strict_mode(self):
        assert mode_location([call("u", "A")] * 5 + [call("u", "B")] * 2) == {"u": "A"}

    def test_tie_goes_to_smallest_id(self):
        assert mode_location([call("u", "B")] * 3 + [call("u", "A")] * 3) == {"u": "A"}

    def test_single_call(self):
        assert mode_location([call("u", "Z", 12)]) == {"u": "Z"}


def test_home_recovery():
    t = residence_distribution([call("u", "A"), call("u", "A"), call("u", "B"), call("v", "C")])
    assert home_recovery(t, {"u": "A", "v": "D"}) == 0.5
