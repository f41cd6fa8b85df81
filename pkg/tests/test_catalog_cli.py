"""Catalog construction, fragment merging, and the command-line surface."""

import copy
import json
import re

import pytest

from xflow import build_catalog, load_catalog_fragments, load_source_stats
from xflow.cli import main
from xflow.errors import CatalogError

from conftest import FLIP_CATALOG_DOC


def test_build_catalog_accessors():
    catalog = build_catalog(FLIP_CATALOG_DOC)
    assert catalog.profiles["cluster"].startup_cost == 25.0
    assert catalog.profiles["solo"].startup_cost == 0.0
    assert catalog.channels["Local"].reusable and catalog.channels["Dist"].reusable
    assert catalog.operator("solo.filter").platform == "solo"
    assert catalog.conversion_operator("Dist", "Local").id == "solo.fetch"
    assert catalog.edge_platforms()[("Local", "Dist")] == "cluster"
    with pytest.raises(CatalogError, match="unknown execution operator"):
        catalog.operator("ghost")


def _dup_op(d):
    d["operators"].append(copy.deepcopy(d["operators"][0]))


def _dup_mapping(d):
    d["mappings"].append(copy.deepcopy(d["mappings"][0]))


def _both_op_and_kind(d):
    d["mappings"][0]["substitute"]["nodes"][0]["kind"] = "Map"


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d.update(platforms=[]), "at least one platform"),
        (lambda d: d["platforms"][0]["unitCosts"].update(quantum=1.0), "unknown resource 'quantum'"),
        (lambda d: d["platforms"].append({"id": "solo"}), "duplicate platform 'solo'"),
        (lambda d: d["platforms"][0].pop("id"), "missing required field 'id'"),
        (lambda d: d["channels"].append({"id": "Local"}), "duplicate channel 'Local'"),
        (_dup_op, "duplicate operator"),
        (lambda d: d["operators"][0].update(platform="mainframe"), "unknown platform 'mainframe'"),
        (lambda d: d["operators"][0].update(inputs=["Tape"]), "unknown channel 'Tape'"),
        (lambda d: d["operators"][0].update(output="Tape"), "unknown channel 'Tape'"),
        (lambda d: d["operators"][0].update(cost="missing.fn"), "unknown cost function"),
        (lambda d: d["operators"][0].update(implements="Quantum"), "unknown operator kind 'Quantum'"),
        (lambda d: d["operators"][0].update(slotInputs={"1": ["Tape"]}), "unknown channel 'Tape'"),
        (lambda d: d["costFunctions"].update(bad={"quantum": {"alpha": 1.0}}), "unknown resource"),
        (lambda d: d["costFunctions"].update(bad={}), "must map resources"),
        (
            lambda d: d["conversions"].append({"from": "Local", "to": "Local", "operator": "solo.fetch"}),
            "cannot map a channel to itself",
        ),
        (
            lambda d: d["conversions"].append({"from": "Local", "to": "Dist", "operator": "ghost"}),
            "unknown execution operator 'ghost'",
        ),
        (
            lambda d: d["conversions"].append({"from": "Nowhere", "to": "Dist", "operator": "solo.fetch"}),
            "unknown channel 'Nowhere'",
        ),
        (_dup_mapping, "duplicate mapping name"),
        (_both_op_and_kind, "exactly one of operator/kind"),
    ],
)
def test_build_catalog_rejects_malformed_docs(mutate, message):
    doc = copy.deepcopy(FLIP_CATALOG_DOC)
    mutate(doc)
    with pytest.raises(CatalogError, match=message):
        build_catalog(doc)


def test_fragments_include_each_file_once(tmp_path):
    (tmp_path / "shared.json").write_text(
        json.dumps({"costFunctions": {"f": {"cpu": {"alpha": 1.0}}}})
    )
    (tmp_path / "a.json").write_text(
        json.dumps({"include": ["shared.json"], "platforms": [{"id": "p", "unitCosts": {"cpu": 1.0}}]})
    )
    (tmp_path / "b.json").write_text(
        json.dumps({"include": ["shared.json"], "channels": [{"id": "C", "reusable": True}]})
    )
    catalog = load_catalog_fragments([tmp_path / "a.json", tmp_path / "b.json"])
    assert "f" in catalog.functions and "C" in catalog.channels


def test_fragments_tolerate_include_cycles(tmp_path):
    (tmp_path / "x.json").write_text(
        json.dumps({"include": ["y.json"], "platforms": [{"id": "p", "unitCosts": {}}]})
    )
    (tmp_path / "y.json").write_text(json.dumps({"include": ["x.json"], "channels": [{"id": "C"}]}))
    catalog = load_catalog_fragments([tmp_path / "x.json"])
    assert "C" in catalog.channels and not catalog.channels["C"].reusable


def test_fragments_reject_conflicting_cost_functions(tmp_path):
    for name in ("d1.json", "d2.json"):
        (tmp_path / name).write_text(
            json.dumps(
                {
                    "platforms": [{"id": name[:2], "unitCosts": {}}],
                    "costFunctions": {"f": {"cpu": {"alpha": 1.0}}},
                }
            )
        )
    with pytest.raises(CatalogError, match="duplicate definition 'f'"):
        load_catalog_fragments([tmp_path / "d1.json", tmp_path / "d2.json"])


def test_load_source_stats_errors(tmp_path):
    with pytest.raises(CatalogError, match="cannot read stats file"):
        load_source_stats(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(CatalogError, match="not valid JSON"):
        load_source_stats(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(CatalogError, match="must be an object"):
        load_source_stats(arr)
    ok = tmp_path / "ok.json"
    ok.write_text('{"src": 1000}')
    assert load_source_stats(ok) == {"src": 1000}


# --- CLI ---


def demo_files(data_dir):
    return [
        str(data_dir / "demo_catalog.json"),
        str(data_dir / "demo_ccg.json"),
        str(data_dir / "demo_profiles.json"),
    ]


def test_cli_validate_ok(data_dir, capsys):
    assert main(["validate", str(data_dir / "kmeans_plan.json")]) == 0
    assert capsys.readouterr().out == "ok: 8 operators, 8 edges\n"


def test_cli_validate_reports_problems(tmp_path, capsys):
    doc = {
        "operators": [
            {"id": "src", "kind": "CollectionSource"},
            {"id": "m", "kind": "Map", "udf": "f"},
            {"id": "out", "kind": "CollectionSink"},
        ],
        "edges": [{"from": "src", "to": "out"}],
    }
    path = tmp_path / "plan.json"
    path.write_text(json.dumps(doc))
    assert main(["validate", str(path)]) == 1
    err = capsys.readouterr().err
    assert "invalid: m: input slot 0 has no incoming edge" in err


def test_cli_exit_codes(tmp_path, capsys):
    assert main([]) == 1  # usage
    assert main(["optimize"]) == 1  # missing positionals
    assert main(["validate", str(tmp_path / "nope.json")]) == 1
    assert "cannot read" in capsys.readouterr().err
    assert main(["--version"]) == 0
    assert capsys.readouterr().out.startswith("xflow ")


def test_cli_mct(data_dir, capsys):
    argv = ["mct", *demo_files(data_dir), "--root", "Stream", "--targets", "DataSet;RDD|CachedRDD"]
    assert main(argv) == 0
    assert capsys.readouterr().out == (
        "root: Stream\n"
        "tree:\n"
        "  Collection -> DataSet\n"
        "  Collection -> RDD\n"
        "  Stream -> Collection\n"
        "serves: DataSet; RDD\n"
        "cost: [3, 3] @ 1\n"
    )
    assert main([*argv, "--dot"]) == 0
    assert capsys.readouterr().out.startswith("digraph")


def test_cli_mct_infeasible_exits_2(data_dir, capsys):
    argv = ["mct", *demo_files(data_dir), "--root", "Broadcast", "--targets", "Stream"]
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("infeasible: no conversion tree")


def test_cli_mct_rejects_empty_targets(data_dir, capsys):
    argv = ["mct", *demo_files(data_dir), "--root", "Stream", "--targets", " ; "]
    assert main(argv) == 1
    assert "empty consumer set" in capsys.readouterr().err


def test_cli_inflate_summary(data_dir, capsys):
    plan = str(data_dir / "kmeans_plan.json")
    assert main(["inflate", plan, *demo_files(data_dir)]) == 0
    assert capsys.readouterr().out == (
        "assign (Map): 2 alternatives\n"
        "average (Map): 2 alternatives\n"
        "centroids (CollectionSource): 2 alternatives\n"
        "loop (RepeatLoop): 2 alternatives\n"
        "out (CollectionSink): 2 alternatives\n"
        "parse (Map): 2 alternatives\n"
        "points (TextFileSource): 2 alternatives\n"
        "reduce (ReduceBy): 3 alternatives\n"
        "denoted plans: 384\n"
    )
    assert main(["inflate", plan, *demo_files(data_dir), "--dot"]) == 0
    assert capsys.readouterr().out.startswith("digraph")


def test_cli_optimize(data_dir, capsys):
    argv = [
        "optimize",
        str(data_dir / "kmeans_plan.json"),
        *demo_files(data_dir),
        "--stats",
        str(data_dir / "demo_stats.json"),
        "--explain",
    ]
    assert main(argv) == 0
    captured = capsys.readouterr()
    assert captured.out.startswith("digraph")
    assert (
        "assignment:\n"
        "  assign -> spark.map\n"
        "  average -> spark.map\n"
        "  centroids -> java.collection-source\n"
        "  loop -> spark.repeat\n"
        "  out -> spark.collection-sink\n"
        "  parse -> spark.map\n"
        "  points -> spark.textfile-source\n"
        "  reduce -> spark.reduceby\n"
        "platforms: java, spark\n"
        "operators cost: [4780.305, 4780.305] @ 0.5 (midpoint 4780.305)\n"
        "movement cost: [1, 1] @ 0.5 (midpoint 1)\n"
        "startup cost: 1000\n"
        "total cost: 5781.305\n"
    ) in captured.out
    assert "phase timings (ms):" in captured.err
    assert re.search(r"counters: pairs=\d+ joins=7 mct_queries=\d+ mct_cache_hits=\d+", captured.err)
    assert "denoted plans: 384" in captured.err


def test_cli_optimize_rejects_bad_prune_rule(data_dir, capsys):
    argv = [
        "optimize",
        str(data_dir / "kmeans_plan.json"),
        *demo_files(data_dir),
        "--stats",
        str(data_dir / "demo_stats.json"),
        "--prune",
        "topk:zero",
    ]
    assert main(argv) == 1
    assert "error:" in capsys.readouterr().err


def test_cli_learn(data_dir, capsys):
    argv = [
        "learn",
        str(data_dir / "demo_logs.jsonl"),
        str(data_dir / "demo_templates.json"),
        "--seed",
        "3",
        "--generations",
        "60",
        "--population",
        "60",
    ]
    assert main(argv) == 0
    out = capsys.readouterr().out
    got = re.match(r"spark\.pertuple\.cpu: alpha=([\d.e+-]+) beta=([\d.e+-]+)\n", out)
    assert got, out
    assert abs(float(got.group(1)) - 0.001) <= 0.1 * 0.001
    assert abs(float(got.group(2)) - 30.0) <= 0.1 * 30.0
    assert "generations: 61\n" in out


def test_cli_simulate(data_dir, capsys):
    argv = [
        "simulate",
        str(data_dir / "kmeans_plan.json"),
        str(data_dir / "demo_truth.json"),
        "--catalog",
        *demo_files(data_dir),
        "--stats",
        str(data_dir / "demo_stats.json"),
    ]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert "initial total cost: 5781.305" in out
    assert (
        "checkpoint reduce/r[0]->average/m[0] (low-confidence): "
        "estimated [10000, 10000]@0.5, observed 10 -> MISMATCH"
    ) in out
    assert "reoptimize after reduce: remaining cost 350.12 -> 57.2 (new plan)" in out
    assert "final total cost: 5363.51" in out
    assert out.rstrip().endswith("checkpoints fired: 1; reoptimizations: 1; final platforms: java, spark")


def test_cli_simulate_report_file_and_frozen_plan(data_dir, tmp_path, capsys):
    report = tmp_path / "trace.txt"
    argv = [
        "simulate",
        str(data_dir / "kmeans_plan.json"),
        str(data_dir / "demo_truth.json"),
        "--catalog",
        *demo_files(data_dir),
        "--stats",
        str(data_dir / "demo_stats.json"),
        "--report",
        str(report),
    ]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert out == "checkpoints fired: 1; reoptimizations: 1; final platforms: java, spark\n"
    text = report.read_text()
    assert "initial plan:" in text and "final total cost: 5363.51" in text
    assert "  average -> java.map" in text.split("final plan:")[1]


def test_cli_simulate_no_reoptimize_keeps_the_plan(data_dir, capsys):
    argv = [
        "simulate",
        str(data_dir / "kmeans_plan.json"),
        str(data_dir / "demo_truth.json"),
        "--catalog",
        *demo_files(data_dir),
        "--stats",
        str(data_dir / "demo_stats.json"),
        "--no-reoptimize",
    ]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert "MISMATCH" in out
    assert "final total cost: 5781.305" in out
    assert out.rstrip().endswith("checkpoints fired: 1; reoptimizations: 0; final platforms: java, spark")


def test_cli_bench_csv(capsys):
    argv = [
        "bench",
        "--topologies",
        "pipeline,tree",
        "--sizes",
        "6",
        "--k",
        "2",
        "--rules",
        "lossless,exhaustive",
        "--seed",
        "1",
    ]
    assert main(argv) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == (
        "topology,n,k,rule,seed,status,cost,plans_denoted,pairs,"
        "mct_queries,inflate_ms,cards_ms,movement_ms,enum_ms,total_ms"
    )
    assert len(lines) == 5
    rows = [line.split(",") for line in lines[1:]]
    assert [r[0] for r in rows] == ["pipeline", "pipeline", "tree", "tree"]
    assert all(r[5] == "ok" for r in rows)
    # The exhaustive row certifies the pruned cost on the same instance.
    assert rows[0][6] == rows[1][6] and rows[2][6] == rows[3][6]


def test_cli_bench_no_timing_is_deterministic(capsys):
    argv = ["bench", "--sizes", "5", "--k", "2", "--no-timing"]
    assert main(argv) == 0
    first = capsys.readouterr().out
    assert first.splitlines()[0] == "topology,n,k,rule,seed,status,cost,plans_denoted,pairs,mct_queries"
    assert main(argv) == 0
    assert capsys.readouterr().out == first


def test_cli_bench_rejects_bad_arguments(capsys):
    assert main(["bench", "--rules", "topk:0"]) == 1
    assert main(["bench", "--sizes", "five"]) == 1
    assert main(["bench", "--topologies", "moebius"]) == 1
    err = capsys.readouterr().err
    assert "error:" in err
