"""Command line entry point: ``cdrsite <subcommand> --config pipeline.yaml``.

Each stage reads its predecessors' files from the output directory and
writes its own, so stages can be re-run independently.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import clustering, costs, evaluate, geo, ingest, pmedian, residence, synth
from .config import ConfigError, PipelineConfig, default_config_text, load_config
from .geojson import point_feature, polygon_feature, write_collection

log = logging.getLogger("cdrsite")

STAGES = ("ingest", "residence", "cluster", "costs", "solve", "evaluate")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PREDECESSOR = 3
EXIT_DATA = 4


class PredecessorMissing(RuntimeError):
    pass


# artifact file names inside the output directory
TOWERS_CLEAN = "towers_clean.csv"
CALLS_CLEAN = "calls_clean.csv"
INGEST_ERRORS = "ingest_errors.txt"
TOWERS_GEO = "towers.geojson"
RESIDENTS = "residents.csv"
RESIDENCE_SUMMARY = "residence_summary.json"
TOWER_CELLS_GEO = "tower_cells.geojson"
REGIONS = "regions.csv"
REGION_MEMBERS = "region_members.csv"
REGIONS_GEO = "regions.geojson"
CENTERS_GEO = "region_centers.geojson"
DIST_CACHE = "distance.bin"
DUR_CACHE = "duration.bin"
SCENARIOS = ("distance", "duration")


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise PredecessorMissing(f"{path.name} not found; run `{stage}` first")
    return path


def _boundary(cfg: PipelineConfig):
    return geo.load_boundary(cfg.path("boundary"))


def _partitions(cfg: PipelineConfig) -> dict:
    path = cfg.path("partitions")
    names = cfg.section("ingest")["partition_names"]
    if not names:
        doc = json.loads(path.read_text(encoding="utf-8"))
        names = [(f.get("properties") or {}).get("name") for f in doc.get("features", [])]
    return {n: geo.load_boundary(path, n) for n in names}


def run_ingest(cfg: PipelineConfig) -> None:
    out = cfg.output_dir
    icfg = cfg.ingest()
    report = ingest.ErrorReport()
    raw = ingest.parse_towers(cfg.path("towers"), strict=icfg.strict, report=report)
    towers = ingest.clean_towers(raw, icfg, _boundary(cfg), _partitions(cfg), report)
    calls = ingest.parse_calls(cfg.path("calls"), towers, strict=icfg.strict, report=report,
                               period=(icfg.period_start, icfg.period_end))
    ingest.write_towers(towers, out / TOWERS_CLEAN)
    ingest.write_calls(calls, out / CALLS_CLEAN)
    report.write(out / INGEST_ERRORS)
    write_collection(out / TOWERS_GEO, (
        point_feature(t.location, {"tower_id": t.tower_id, "partition": t.partition,
                                   "merged_sites": len(t.merged_site_ids)}) for t in towers), "towers")
    log.info("ingest: %d towers, %d calls, %d line errors", len(towers), len(calls), len(report))


def run_residence(cfg: PipelineConfig) -> None:
    out = cfg.output_dir
    towers = ingest.read_towers(_need(out / TOWERS_CLEAN, "ingest"))
    calls = ingest.read_calls(_need(out / CALLS_CLEAN, "ingest"))
    table = residence.residence_distribution(residence.night_filter(calls, cfg.residence()),
                                             {c.caller_id for c in calls})
    table.write(out / RESIDENTS, [t.tower_id for t in towers])
    modes = residence.mode_location(calls)
    summary = {
        "subscribers": table.subscribers_total,
        "subscribers_with_night_calls": table.subscribers_with_night_calls,
        "coverage": table.coverage,
        "night_calls": table.stats["night_calls"],
        "expected_residents_total": table.total(),
        "mode_location_towers": len(set(modes.values())),
    }
    (out / RESIDENCE_SUMMARY).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    diagram = geo.voronoi([t.location for t in towers], _boundary(cfg))
    write_collection(out / TOWER_CELLS_GEO, (
        polygon_feature(cell, {"tower_id": t.tower_id, "expected_residents": table.residents(t.tower_id),
                               "area": cell.area})
        for t, cell in zip(towers, diagram.cells)), "tower_cells")
    log.info("residence: %d subscribers with night calls (coverage %.1f%%)",
             table.subscribers_with_night_calls, 100 * table.coverage)


def run_cluster(cfg: PipelineConfig) -> None:
    out = cfg.output_dir
    towers = ingest.read_towers(_need(out / TOWERS_CLEAN, "ingest"))
    calls = ingest.read_calls(_need(out / CALLS_CLEAN, "ingest"))
    residents = residence.read_residents(_need(out / RESIDENTS, "residence"))
    activity = clustering.partition_activity(calls, towers)
    regions = clustering.build_regions(towers, residents, cfg.cluster(), activity, _boundary(cfg))
    clustering.write_regions(regions, out / REGIONS, out / REGION_MEMBERS)
    write_collection(out / REGIONS_GEO, (
        polygon_feature(r.polygon, {"region_id": r.region_id, "weight": r.weight, "partition": r.partition})
        for r in regions), "regions")
    write_collection(out / CENTERS_GEO, (
        point_feature(r.center, {"region_id": r.region_id, "weight": r.weight, "partition": r.partition})
        for r in regions), "region_centers")
    log.info("cluster: %d regions, allocation %s", len(regions), clustering.allocate_k(cfg.cluster().total_k, activity))


def _provider(cfg: PipelineConfig):
    c = cfg.section("costs")
    if c["provider"] == "synthetic":
        return costs.synthetic_provider(float(c["speed_mps"]))
    h = c["http"]
    return costs.HttpDistanceMatrixProvider(
        endpoint=h["endpoint"], key_env=h["key_env"], mode=h["mode"], max_origins=h["max_origins"],
        max_destinations=h["max_destinations"], requests_per_second=float(h["requests_per_second"]))


def run_costs(cfg: PipelineConfig) -> None:
    regions = clustering.read_regions(_need(cfg.output_dir / REGIONS, "cluster"))
    cache = cfg.path("cache_dir")
    cache.mkdir(parents=True, exist_ok=True)
    provider = _provider(cfg)
    dpath, tpath = cache / DIST_CACHE, cache / DUR_CACHE
    if dpath.exists() and tpath.exists():
        try:
            D = costs.load_matrix(dpath, len(regions))
            T = costs.load_matrix(tpath, len(regions))
            if D.provider == provider.name and D.departure == cfg.departure:
                log.info("costs: reusing cached matrices in %s", cache)
                return
        except costs.CostMatrixError as exc:
            log.warning("costs: ignoring cache: %s", exc)
    D, T = costs.build_matrices([r.center for r in regions], provider, cfg.departure,
                                workers=int(cfg.section("costs")["workers"]))
    costs.save_matrix(D, dpath)
    costs.save_matrix(T, tpath)
    log.info("costs: %dx%d matrices, %.2f%% cells imputed", D.n, D.n, 100 * costs.missing_fraction(D))


def _load_matrices(cfg: PipelineConfig, n: int):
    cache = cfg.path("cache_dir")
    D = costs.load_matrix(_need(cache / DIST_CACHE, "costs"), n)
    T = costs.load_matrix(_need(cache / DUR_CACHE, "costs"), n)
    return D, T


def run_solve(cfg: PipelineConfig) -> None:
    out = cfg.output_dir
    regions = clustering.read_regions(_need(out / REGIONS, "cluster"))
    D, T = _load_matrices(cfg, len(regions))
    weights = [r.weight for r in regions]
    labels = [r.region_id for r in regions]
    for scenario, matrix in zip(SCENARIOS, (D, T)):
        inst = pmedian.PMedianInstance(weights, matrix.values, cfg.m, tuple(labels))
        pmedian.write_instance(inst, out / f"instance_{scenario}.csv")
        sol = pmedian.solve(inst, cfg.solve_options())
        doc = sol.to_dict(labels)
        doc["cost_kind"] = matrix.kind
        doc["centers"] = {str(labels[j]): [regions[j].center.lat, regions[j].center.lon] for j in sol.open_set}
        (out / f"solution_{scenario}.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n",
                                                        encoding="utf-8")
        write_collection(out / f"facilities_{scenario}.geojson", (
            point_feature(regions[j].center, {"region_id": labels[j], "scenario": f"optimized-{scenario}"})
            for j in sol.open_set), f"facilities_{scenario}")
        log.info("solve[%s]: objective %.6g, %s, gap %.2e", scenario, sol.objective, sol.proof, sol.gap)


def run_evaluate(cfg: PipelineConfig) -> str:
    out = cfg.output_dir
    regions = clustering.read_regions(_need(out / REGIONS, "cluster"))
    D, T = _load_matrices(cfg, len(regions))
    centers = [r.center for r in regions]
    labels = [r.region_id for r in regions]
    index = {lab: k for k, lab in enumerate(labels)}
    sets = evaluate.load_facility_sets(cfg.path("facilities"))
    current_name = cfg.section("evaluate")["current_set"]
    if current_name not in sets:
        raise evaluate.EvaluationError(f"facility file has no set named {current_name!r}")
    boundary = _boundary(cfg)
    scenarios = {"Current": evaluate.map_current_facilities(sets[current_name], centers, boundary)}
    for scenario in SCENARIOS:
        doc = json.loads(_need(out / f"solution_{scenario}.json", "solve").read_text(encoding="utf-8"))
        scenarios[f"Optimized ({scenario.capitalize()})"] = [index[lab] for lab in doc["open"]]
    write_collection(out / "facilities_current.geojson", (
        point_feature(p, {"name": current_name, "region_id": labels[evaluate.map_current_facilities([p], centers)[0]]})
        for p in sets[current_name]), "facilities_current")
    report = evaluate.access_report([r.weight for r in regions], scenarios, D, T, labels)
    text = report.to_text()
    (out / "report.txt").write_text(text, encoding="utf-8")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    return text


def run_synth(cfg: PipelineConfig) -> None:
    s = cfg.section("synth")
    spec = synth.ScenarioSpec(seed=int(s["seed"]), noise=float(s["noise"]), tower_count=int(s["tower_count"]))
    target = cfg.path("towers").parent
    gen = synth.generate(spec, target)
    # honour custom file names in the config
    for key, produced in (("towers", gen.towers), ("calls", gen.calls), ("boundary", gen.boundary),
                          ("partitions", gen.partitions), ("facilities", gen.facilities),
                          ("ground_truth", gen.ground_truth)):
        wanted = cfg.path(key)
        if wanted != produced:
            wanted.parent.mkdir(parents=True, exist_ok=True)
            produced.replace(wanted)
    log.info("synth: scenario written to %s", target)


RUNNERS = {
    "ingest": run_ingest,
    "residence": run_residence,
    "cluster": run_cluster,
    "costs": run_costs,
    "solve": run_solve,
    "evaluate": run_evaluate,
    "synth": run_synth,
}


def run_subcommand(name: str, cfg: PipelineConfig) -> int:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    chain = STAGES if name == "all" else (name,)
    for stage in chain:
        result = RUNNERS[stage](cfg)
        if stage == "evaluate":
            sys.stdout.write(result)
    return EXIT_OK


STAGE_HELP = {
    "ingest": "clean towers and calls",
    "residence": "night-time residence per tower",
    "cluster": "weighted k-means residential regions",
    "costs": "distance and duration matrices between region centres",
    "solve": "p-median placement for each cost kind",
    "evaluate": "average access report for current and optimised sites",
    "synth": "write a synthetic scenario to the data paths",
    "all": "run ingest through evaluate",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdrsite", description="CDR-driven facility placement pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "synth", "all"):
        sp = sub.add_parser(name, help=STAGE_HELP[name])
        sp.add_argument("--config", "-c", help="pipeline YAML file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config value, e.g. --set solve.m=10")
        sp.add_argument("--output-dir", help="override paths.output_dir")
        sp.add_argument("--m", type=int, help="override solve.m")
        sp.add_argument("--seed", type=int, help="override cluster.seed")
        sp.add_argument("--total-k", type=int, help="override cluster.total_k")
        sp.add_argument("--epsilon", type=float, help="override solve.epsilon")
    init = sub.add_parser("init-config", help="print a config template")
    init.add_argument("--data-dir", default="data")
    init.add_argument("--output-dir", default="out")
    return p


def _flag_overrides(args) -> list[str]:
    out = list(args.set)
    for flag, key in (("output_dir", "paths.output_dir"), ("m", "solve.m"), ("seed", "cluster.seed"),
                      ("total_k", "cluster.total_k"), ("epsilon", "solve.epsilon")):
        value = getattr(args, flag, None)
        if value is not None:
            out.append(f"{key}={value}")
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "init-config":
        sys.stdout.write(default_config_text(args.data_dir, args.output_dir))
        return EXIT_OK
    try:
        cfg = load_config(args.config, _flag_overrides(args))
        return run_subcommand(args.command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PredecessorMissing as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_PREDECESSOR
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
