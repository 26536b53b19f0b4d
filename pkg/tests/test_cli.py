import json
import shutil

import pytest

from cdrsite import cli
from cdrsite.config import ConfigError, default_config_text, load_config
from cdrsite.geojson import validate_collection


class TestConfig:
    def test_defaults_round_trip(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(default_config_text())
        cfg = load_config(p)
        assert cfg.m == 20 and cfg.cluster().total_k == 200
        assert cfg.path("towers") == tmp_path / "data" / "towers.csv"

    def test_all_problems_reported_together(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("solve:\n  m: 0\ncluster:\n  total_k: -1\nbogus: 1\n")
        with pytest.raises(ConfigError) as err:
            load_config(p)
        text = "\n".join(err.value.problems)
        assert "solve.m" in text and "cluster.total_k" in text and "bogus" in text

    def test_override(self, tmp_path):
        cfg = load_config(None, ["solve.m=7", "residence.night_start=22:00"])
        assert cfg.m == 7
        assert cfg.residence().night_start.hour == 22

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            load_config(None, ["solve.nope=1"])


def test_missing_predecessor_exit_code(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text(default_config_text())
    assert cli.main(["solve", "--config", str(p)]) == cli.EXIT_PREDECESSOR
    assert "run `cluster` first" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path):
    assert cli.main(["ingest", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG


def test_flag_overrides_config(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(default_config_text())
    args = cli.build_parser().parse_args(["solve", "--config", str(p), "--m", "5", "--set", "cluster.seed=3"])
    cfg = load_config(p, cli._flag_overrides(args))
    assert cfg.m == 5 and cfg.cluster().seed == 3


def test_pipeline_artifacts(pipeline_run):
    out = pipeline_run.output_dir
    for name in ("towers", "tower_cells", "regions", "region_centers", "facilities_distance",
                 "facilities_duration", "facilities_current"):
        assert validate_collection(out / f"{name}.geojson") > 0
    report = (out / "report.txt").read_text().splitlines()
    assert [line.split("  ")[0] for line in report[2:5]] == ["Current", "Optimized (Distance)", "Optimized (Duration)"]
    sol = json.loads((out / "solution_distance.json").read_text())
    assert sol["proof"] == "exact" and len(sol["open"]) == 20


def test_stage_rerun_is_stable(pipeline_run, tmp_path):
    out = pipeline_run.output_dir
    before = (out / "regions.csv").read_bytes()
    assert cli.run_subcommand("cluster", pipeline_run) == 0
    assert (out / "regions.csv").read_bytes() == before


def test_unquoted_clock_times(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("residence:\n  night_start: 23:00\n  night_end: 08:00\n")
    cfg = load_config(p).residence()
    assert (cfg.night_start.hour, cfg.night_end.hour) == (23, 8)
