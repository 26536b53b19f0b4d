import filecmp

import pytest

from cdrsite import synth
from cdrsite.geo import load_boundary


def test_same_seed_same_bytes(tmp_path):
    spec = synth.ScenarioSpec(tower_count=150, facility_count=5)
    a = synth.generate(spec, tmp_path / "a")
    b = synth.generate(spec, tmp_path / "b")
    for name in ("towers", "calls", "ground_truth", "boundary", "partitions", "facilities"):
        assert filecmp.cmp(getattr(a, name), getattr(b, name), shallow=False), name


def test_partitions_tile_the_city(default_scenario):
    city = load_boundary(default_scenario.boundary)
    parts = [load_boundary(default_scenario.partitions, n) for n in ("europe", "asia")]
    assert sum(p.area for p in parts) == pytest.approx(city.area, rel=1e-9)


def test_ground_truth_shape(default_scenario):
    truth = synth.read_ground_truth(default_scenario.ground_truth)
    quiet = synth.read_ground_truth(default_scenario.ground_truth, with_night_calls_only=True)
    assert 15_000 <= len(truth) <= 30_000
    assert 0.8 * len(truth) <= len(quiet) < len(truth)
    assert sum(synth.tower_truth_counts(truth).values()) == len(truth)
