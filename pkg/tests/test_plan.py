"""Dataflow plan construction, validation, serialization, and ordering."""

import pytest

from xflow import build_plan, parse_plan, serialize_plan, topo_order, validate_plan
from xflow.errors import PlanSchemaError
from xflow.plan import KIND_SHAPES, loop_bodies, multiplicities


def linear_specs():
    ops = [
        {"id": "src", "kind": "CollectionSource"},
        {"id": "keep", "kind": "Filter", "udf": "p", "selectivity": 0.2},
        {"id": "out", "kind": "CollectionSink"},
    ]
    edges = [{"from": "src", "to": "keep"}, {"from": "keep", "to": "out"}]
    return ops, edges


def loop_specs():
    ops = [
        {"id": "points", "kind": "TextFileSource"},
        {"id": "parse", "kind": "Map", "udf": "parse"},
        {"id": "centroids", "kind": "CollectionSource"},
        {"id": "loop", "kind": "RepeatLoop", "iterations": 10},
        {"id": "assign", "kind": "Map", "udf": "nearest"},
        {"id": "reduce", "kind": "ReduceBy", "udf": "sum"},
        {"id": "average", "kind": "Map", "udf": "mean"},
        {"id": "out", "kind": "CollectionSink"},
    ]
    edges = [
        {"from": "points", "to": "parse"},
        {"from": "parse", "to": "assign"},
        {"from": "centroids", "to": "loop", "toSlot": 0},
        {"from": "loop", "fromSlot": 0, "to": "assign", "toSlot": 1},
        {"from": "assign", "to": "reduce"},
        {"from": "reduce", "to": "average"},
        {"from": "average", "to": "loop", "toSlot": 1, "feedback": True},
        {"from": "loop", "fromSlot": 1, "to": "out"},
    ]
    return ops, edges


def test_kind_shapes_cover_every_declared_kind():
    for kind, (arity_in, variadic, arity_out) in KIND_SHAPES.items():
        assert arity_in >= 0 and arity_out >= 0
        if variadic:
            assert arity_in >= 1, kind
    assert KIND_SHAPES["Join"] == (2, False, 1)
    assert KIND_SHAPES["RepeatLoop"] == (2, False, 2)
    assert KIND_SHAPES["CollectionSink"] == (1, False, 0)


def test_build_plan_happy_path():
    plan = build_plan(*linear_specs())
    assert len(plan) == 3
    assert plan.sources() == ["src"]
    assert plan.sinks() == ["out"]
    assert plan.op("keep").kind.selectivity == 0.2
    assert plan.op("keep").kind.udf == "p"
    assert [e.key() for e in plan.edges] == [
        ("keep", 0, "out", 0, False),
        ("src", 0, "keep", 0, False),
    ]
    assert validate_plan(plan) == []


def test_side_inputs_extend_arity_from_wiring():
    ops = [
        {"id": "a", "kind": "CollectionSource"},
        {"id": "b", "kind": "CollectionSource"},
        {"id": "m", "kind": "Map", "udf": "f"},
        {"id": "out", "kind": "CollectionSink"},
    ]
    edges = [
        {"from": "a", "to": "m", "toSlot": 0},
        {"from": "b", "to": "m", "toSlot": 1},
        {"from": "m", "to": "out"},
    ]
    plan = build_plan(ops, edges)
    assert plan.op("m").kind.arity_in == 2
    assert validate_plan(plan) == []
    # Non-variadic kinds never grow.
    plan2 = build_plan(*linear_specs())
    assert plan2.op("out").kind.arity_in == 1


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda o, e: o.append({"id": "src", "kind": "Map"}), "duplicate operator id"),
        (lambda o, e: o.append({"id": "x", "kind": "Mystery"}), "unknown operator kind"),
        (lambda o, e: e.append({"from": "src", "to": "ghost"}), "unknown operator"),
        (lambda o, e: (o.pop(), e.pop()), "must contain a sink"),
        (lambda o, e: e.append({"from": "src"}), "missing field"),
        (lambda o, e: o.append({"kind": "Map"}), "required"),
    ],
)
def test_build_plan_schema_errors(mutate, message):
    ops, edges = linear_specs()
    mutate(ops, edges)
    with pytest.raises(PlanSchemaError, match=message):
        build_plan(ops, edges)


def test_parse_plan_rejects_malformed_documents():
    with pytest.raises(PlanSchemaError, match="not valid JSON"):
        parse_plan("{nope")
    with pytest.raises(PlanSchemaError, match="top level"):
        parse_plan("[]")
    with pytest.raises(PlanSchemaError, match="missing top-level key 'edges'"):
        parse_plan('{"operators": []}')
    with pytest.raises(PlanSchemaError, match="must be an array"):
        parse_plan('{"operators": {}, "edges": []}')


def test_validate_reports_slot_problems():
    ops = [
        {"id": "a", "kind": "CollectionSource"},
        {"id": "b", "kind": "CollectionSource"},
        {"id": "j", "kind": "Join"},
        {"id": "out", "kind": "CollectionSink"},
    ]
    edges = [
        {"from": "a", "to": "j", "toSlot": 0},
        {"from": "b", "to": "j", "toSlot": 0},
        {"from": "j", "to": "out"},
    ]
    problems = validate_plan(build_plan(ops, edges))
    assert any("slot 0 has 2 incoming edges" in p for p in problems)
    assert any("slot 1 has no incoming edge" in p for p in problems)


def test_validate_reports_range_reachability_and_annotations():
    ops = [
        {"id": "src", "kind": "CollectionSource"},
        {"id": "keep", "kind": "Filter", "selectivity": -0.5},
        {"id": "stray", "kind": "Count", "iterations": 3},
        {"id": "out", "kind": "CollectionSink"},
    ]
    edges = [
        {"from": "src", "to": "keep"},
        {"from": "keep", "to": "out"},
        {"from": "stray", "to": "stray", "fromSlot": 2},
    ]
    problems = validate_plan(build_plan(ops, edges))
    assert any("selectivity must be nonnegative" in p for p in problems)
    assert any("iterations annotation on non-loop kind" in p for p in problems)
    assert any("output slot 2 out of range" in p for p in problems)
    assert any("unreachable from any source" in p for p in problems)


def test_validate_rejects_cycles_and_stray_feedback():
    ops = [
        {"id": "src", "kind": "CollectionSource"},
        {"id": "m1", "kind": "Map", "udf": "f"},
        {"id": "m2", "kind": "Map", "udf": "g"},
        {"id": "out", "kind": "CollectionSink"},
    ]
    edges = [
        {"from": "src", "to": "m1"},
        {"from": "m1", "to": "m2", "toSlot": 1},
        {"from": "m2", "to": "m1", "toSlot": 1},
        {"from": "m1", "to": "out"},
    ]
    problems = validate_plan(build_plan(ops, edges))
    assert any("cycle through operators" in p for p in problems)

    ops, edges = linear_specs()
    edges.append({"from": "out", "to": "keep", "toSlot": 1, "feedback": True})
    # Sinks have no output slots, so patch the stray feedback onto the filter.
    edges[-1]["from"] = "keep"
    problems = validate_plan(build_plan(ops, edges))
    assert any("feedback edge into non-loop operator" in p for p in problems)


def test_loop_plan_validates_and_orders_body_contiguously():
    plan = build_plan(*loop_specs())
    assert validate_plan(plan) == []
    assert topo_order(plan) == [
        "centroids",
        "points",
        "parse",
        "loop",
        "assign",
        "reduce",
        "average",
        "out",
    ]
    assert loop_bodies(plan) == {"loop": frozenset({"assign", "reduce", "average"})}
    mult = multiplicities(plan)
    assert mult["assign"] == mult["reduce"] == mult["average"] == 10.0
    assert mult["loop"] == mult["points"] == mult["out"] == 1.0


def test_topo_order_raises_on_forward_cycle():
    ops = [
        {"id": "src", "kind": "CollectionSource"},
        {"id": "a", "kind": "Map", "udf": "f"},
        {"id": "b", "kind": "Map", "udf": "g"},
        {"id": "out", "kind": "CollectionSink"},
    ]
    edges = [
        {"from": "src", "to": "a"},
        {"from": "a", "to": "b", "toSlot": 1},
        {"from": "b", "to": "a", "toSlot": 1},
        {"from": "b", "to": "out"},
    ]
    with pytest.raises(PlanSchemaError, match="cycle"):
        topo_order(build_plan(ops, edges))


def test_serialize_round_trips_canonically():
    plan = build_plan(*loop_specs())
    text = serialize_plan(plan)
    again = parse_plan(text)
    assert serialize_plan(again) == text
    assert sorted(again.operators) == sorted(plan.operators)
    assert [e.key() for e in again.edges] == [e.key() for e in plan.edges]
    assert again.op("loop").kind.iterations == 10


def test_bundled_plan_parses_clean(data_dir):
    plan = parse_plan((data_dir / "kmeans_plan.json").read_text())
    assert validate_plan(plan) == []
    assert len(plan) == 8
    assert plan.sources() == ["centroids", "points"]
