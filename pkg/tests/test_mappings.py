"""Pattern matching, substitution expansion, and plan inflation."""

import pytest

from xflow import build_catalog, build_plan, inflate, load_catalog_fragments, match
from xflow.errors import CatalogError, MappingDepthError, UncoverableOperatorError
from xflow.mappings import GraphPattern, PatternEdge, PatternNode

from conftest import FLIP_CATALOG_DOC


def map_chain(n):
    ops = [{"id": "src", "kind": "CollectionSource"}]
    edges = []
    prev = "src"
    for i in range(n):
        ops.append({"id": f"m{i}", "kind": "Map", "udf": "f" if i % 2 == 0 else None})
        edges.append({"from": prev, "to": f"m{i}"})
        prev = f"m{i}"
    ops.append({"id": "out", "kind": "CollectionSink"})
    edges.append({"from": prev, "to": "out"})
    return build_plan(ops, edges)


def test_match_binds_single_nodes_with_udf_predicates():
    plan = map_chain(3)  # m0 and m2 carry a udf, m1 does not
    any_map = GraphPattern((PatternNode("x", "Map"),), ())
    assert [b["x"] for b in match(any_map, plan)] == ["m0", "m1", "m2"]
    with_udf = GraphPattern((PatternNode("x", "Map", requires_udf=True),), ())
    assert [b["x"] for b in match(with_udf, plan)] == ["m0", "m2"]
    without = GraphPattern((PatternNode("x", "Map", requires_udf=False),), ())
    assert [b["x"] for b in match(without, plan)] == ["m1"]


def test_match_respects_edges_and_injectivity():
    plan = map_chain(3)
    pair = GraphPattern(
        (PatternNode("a", "Map"), PatternNode("b", "Map")),
        (PatternEdge("a", "b"),),
    )
    got = match(pair, plan)
    assert [(b["a"], b["b"]) for b in got] == [("m0", "m1"), ("m1", "m2")]
    triangle = GraphPattern(
        (PatternNode("a", "Map"), PatternNode("b", "Map")),
        (PatternEdge("a", "b"), PatternEdge("b", "a")),
    )
    assert match(triangle, plan) == []


def test_pattern_validation():
    with pytest.raises(CatalogError, match="at least one node"):
        GraphPattern((), ())
    with pytest.raises(CatalogError, match="unique"):
        GraphPattern((PatternNode("x", "Map"), PatternNode("x", "Filter")), ())
    with pytest.raises(CatalogError, match="unknown node"):
        GraphPattern((PatternNode("x", "Map"),), (PatternEdge("x", "ghost"),))
    with pytest.raises(CatalogError, match="connected"):
        GraphPattern((PatternNode("x", "Map"), PatternNode("y", "Filter")), ())


def test_inflate_enumerates_alternatives_per_operator(data_dir):
    catalog = load_catalog_fragments(
        [data_dir / "demo_catalog.json", data_dir / "demo_ccg.json", data_dir / "demo_profiles.json"]
    )
    plan = build_plan(
        [
            {"id": "src", "kind": "TextFileSource"},
            {"id": "reduce", "kind": "ReduceBy", "udf": "sum"},
            {"id": "out", "kind": "CollectionSink"},
        ],
        [{"from": "src", "to": "reduce"}, {"from": "reduce", "to": "out"}],
    )
    inflated = inflate(plan, catalog)
    got = {
        oid: [[m.op.id for m in alt.members] for alt in node.alternatives]
        for oid, node in inflated.operators.items()
    }
    # ReduceBy runs directly on either platform or decomposes into a java
    # GroupBy + Map chain; the spark Map variant is dropped inside the
    # decomposition because spark.map does not read the groupby Collection.
    assert got["reduce"] == [
        ["java.groupby", "java.map"],
        ["java.reduceby"],
        ["spark.reduceby"],
    ]
    assert got["src"] == [["java.textfile-source"], ["spark.textfile-source"]]
    assert inflated.denoted_plan_count() == 2 * 3 * 2


def test_inflate_covers_bundled_demo_plan(data_dir):
    from xflow import parse_plan

    catalog = load_catalog_fragments(
        [data_dir / "demo_catalog.json", data_dir / "demo_ccg.json", data_dir / "demo_profiles.json"]
    )
    plan = parse_plan((data_dir / "kmeans_plan.json").read_text())
    inflated = inflate(plan, catalog)
    assert inflated.denoted_plan_count() == 384
    counts = {oid: len(node.alternatives) for oid, node in inflated.operators.items()}
    assert counts["reduce"] == 3
    assert all(n == 2 for oid, n in counts.items() if oid != "reduce")


def test_inflate_reports_uncoverable_kinds(data_dir):
    catalog = load_catalog_fragments(
        [data_dir / "demo_catalog.json", data_dir / "demo_ccg.json", data_dir / "demo_profiles.json"]
    )
    plan = build_plan(
        [
            {"id": "src", "kind": "TextFileSource"},
            {"id": "s", "kind": "Sort"},
            {"id": "out", "kind": "CollectionSink"},
        ],
        [{"from": "src", "to": "s"}, {"from": "s", "to": "out"}],
    )
    with pytest.raises(UncoverableOperatorError, match="Sort"):
        inflate(plan, catalog)


def test_cyclic_decomposition_hits_the_depth_cap():
    doc = {
        "platforms": [{"id": "p", "unitCosts": {"cpu": 1.0}}],
        "channels": [{"id": "C", "reusable": True}],
        "costFunctions": {},
        "operators": [],
        "conversions": [],
        "mappings": [
            {
                "name": "map-to-map",
                "pattern": {"nodes": [{"name": "x", "kind": "Map"}], "edges": []},
                "substitute": {
                    "nodes": [{"name": "y", "kind": "Map"}],
                    "edges": [],
                    "inputs": [["y", 0]],
                    "outputs": [["y", 0]],
                },
            }
        ],
    }
    catalog = build_catalog(doc)
    plan = build_plan(
        [
            {"id": "src", "kind": "CollectionSource"},
            {"id": "m", "kind": "Map", "udf": "f"},
            {"id": "out", "kind": "CollectionSink"},
        ],
        [{"from": "src", "to": "m"}, {"from": "m", "to": "out"}],
    )
    with pytest.raises(MappingDepthError, match="map-to-map"):
        inflate(plan, catalog)


def test_alternatives_are_sorted_and_deduplicated():
    catalog = build_catalog(FLIP_CATALOG_DOC)
    plan = build_plan(
        [
            {"id": "src", "kind": "CollectionSource"},
            {"id": "filt", "kind": "Filter", "udf": "p"},
            {"id": "sink", "kind": "CollectionSink"},
        ],
        [{"from": "src", "to": "filt"}, {"from": "filt", "to": "sink"}],
    )
    inflated = inflate(plan, catalog)
    alts = inflated.operators["filt"].alternatives
    assert [m.op.id for a in alts for m in a.members] == ["cluster.filter", "solo.filter"]
    assert [a.key for a in alts] == sorted(a.key for a in alts)
    assert len({a.key for a in alts}) == len(alts)


def test_alternative_slot_routing(data_dir):
    catalog = load_catalog_fragments(
        [data_dir / "demo_catalog.json", data_dir / "demo_ccg.json", data_dir / "demo_profiles.json"]
    )
    plan = build_plan(
        [
            {"id": "a", "kind": "TextFileSource"},
            {"id": "b", "kind": "CollectionSource"},
            {"id": "m", "kind": "Map", "udf": "f"},
            {"id": "out", "kind": "CollectionSink"},
        ],
        [
            {"from": "a", "to": "m", "toSlot": 0},
            {"from": "b", "to": "m", "toSlot": 1},
            {"from": "m", "to": "out"},
        ],
    )
    inflated = inflate(plan, catalog)
    by_platform = {alt.member(alt.inputs[0][0]).op.platform: alt
                   for alt in inflated.operators["m"].alternatives}
    # Undeclared side-input slots route to the entry member at the same index;
    # spark.map overrides its side slot to accept broadcast data.
    assert by_platform["java"].route_input(1) == (by_platform["java"].inputs[0][0], 1)
    assert by_platform["java"].accepted(1) == frozenset({"Stream", "Collection"})
    assert by_platform["spark"].accepted(1) == frozenset({"RDD", "CachedRDD", "Broadcast"})
    assert by_platform["spark"].accepted(0) == frozenset({"RDD", "CachedRDD"})
    assert by_platform["java"].output_channel(0) == "Stream"
