from pathlib import Path

import numpy as np
import pytest

from cdrsite import cli, synth
from cdrsite.config import default_config_text, load_config
from cdrsite.geo import BoundaryPolygon


@pytest.fixture
def unit_square():
    return BoundaryPolygon.from_lonlat("square", [[(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_instance(rng, n, m, symmetric=False):
    """Small p-median instance with planar distances or noisy asymmetric costs."""
    from cdrsite.pmedian import PMedianInstance

    xy = rng.uniform(0, 100, size=(n, 2))
    d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2))
    if not symmetric:
        d = d * rng.uniform(0.8, 1.25, size=(n, n))
    np.fill_diagonal(d, 0.0)
    w = rng.integers(0, 20, size=n).astype(float)
    if w.sum() == 0:
        w[0] = 1.0
    return PMedianInstance(w, d, m)


@pytest.fixture(scope="session")
def default_scenario(tmp_path_factory):
    """Default synthetic city, generated once per session."""
    root = tmp_path_factory.mktemp("scenario")
    return synth.generate(synth.ScenarioSpec(), root / "data")


@pytest.fixture(scope="session")
def pipeline_run(default_scenario, tmp_path_factory):
    """Full `all` run on the default scenario; returns the loaded config."""
    root = Path(default_scenario.towers).parent.parent
    cfg_path = root / "pipeline.yaml"
    cfg_path.write_text(default_config_text("data", "out"), encoding="utf-8")
    assert cli.main(["all", "--config", str(cfg_path)]) == 0
    return load_config(cfg_path)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(verdicts):
        terminalreporter.write_line(verdicts[k])
