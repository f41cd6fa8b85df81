"""Shared fixtures: bundled demo data, a two-platform instance whose optimum
flips once the true cardinality is observed, and seeded random channel graphs
used to compare the solvers against their brute-force oracles."""

from __future__ import annotations

import random
from pathlib import Path
from typing import NamedTuple

import pytest

import xflow
from xflow import (
    AnnotatedPlan,
    DataflowPlan,
    IntervalEstimate,
    OptimizationOutcome,
    PlatformCatalog,
    annotate,
    build_catalog,
    build_plan,
    enumerate_plans,
    inflate,
)
from xflow.ccg import Channel, ChannelConversionGraph, ConversionEdge

DATA = Path(xflow.__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


def single_node_mapping(name: str, kind: str, op: str, n_in: int, n_out: int) -> dict:
    return {
        "name": name,
        "pattern": {"nodes": [{"name": "x", "kind": kind}], "edges": []},
        "substitute": {
            "nodes": [{"name": "x", "operator": op}],
            "edges": [],
            "inputs": [["x", 0]] * n_in,
            "outputs": [["x", 0]] * n_out,
        },
    }


# Two platforms, both channels reusable. "solo" is pay-per-tuple, "cluster"
# has a high flat fee per operator: at the estimated 500 tuples the cluster
# wins everywhere, at an observed 50 the solo sink wins.
FLIP_CATALOG_DOC = {
    "platforms": [
        {"id": "solo", "unitCosts": {"cpu": 1.0}},
        {"id": "cluster", "unitCosts": {"cpu": 1.0}, "startupCost": 25.0},
    ],
    "channels": [
        {"id": "Local", "reusable": True},
        {"id": "Dist", "reusable": True},
    ],
    "costFunctions": {
        "solo.work": {"cpu": {"alpha": 1.0, "beta": 0.0}},
        "cluster.work": {"cpu": {"alpha": 0.1, "beta": 100.0}},
        "conv.fn": {"cpu": {"alpha": 0.01, "beta": 1.0}},
    },
    "operators": [
        {"id": "solo.source", "platform": "solo", "implements": "CollectionSource",
         "inputs": [], "output": "Local", "cost": "solo.work"},
        {"id": "solo.filter", "platform": "solo", "implements": "Filter",
         "inputs": ["Local"], "output": "Local", "cost": "solo.work"},
        {"id": "solo.sink", "platform": "solo", "implements": "CollectionSink",
         "inputs": ["Local"], "output": None, "cost": "solo.work"},
        {"id": "cluster.source", "platform": "cluster", "implements": "CollectionSource",
         "inputs": [], "output": "Dist", "cost": "cluster.work"},
        {"id": "cluster.filter", "platform": "cluster", "implements": "Filter",
         "inputs": ["Dist"], "output": "Dist", "cost": "cluster.work"},
        {"id": "cluster.sink", "platform": "cluster", "implements": "CollectionSink",
         "inputs": ["Dist"], "output": None, "cost": "cluster.work"},
        {"id": "solo.fetch", "platform": "solo", "inputs": ["Dist"],
         "output": "Local", "cost": "conv.fn"},
        {"id": "cluster.ship", "platform": "cluster", "inputs": ["Local"],
         "output": "Dist", "cost": "conv.fn"},
    ],
    "conversions": [
        {"from": "Dist", "to": "Local", "operator": "solo.fetch"},
        {"from": "Local", "to": "Dist", "operator": "cluster.ship"},
    ],
    "mappings": [
        single_node_mapping("source-on-solo", "CollectionSource", "solo.source", 0, 1),
        single_node_mapping("source-on-cluster", "CollectionSource", "cluster.source", 0, 1),
        single_node_mapping("filter-on-solo", "Filter", "solo.filter", 1, 1),
        single_node_mapping("filter-on-cluster", "Filter", "cluster.filter", 1, 1),
        single_node_mapping("sink-on-solo", "CollectionSink", "solo.sink", 1, 0),
        single_node_mapping("sink-on-cluster", "CollectionSink", "cluster.sink", 1, 0),
    ],
}

FLIP_STATS = {"src": 1000}


class FlipInstance(NamedTuple):
    catalog: PlatformCatalog
    plan: DataflowPlan
    stats: dict
    ann: AnnotatedPlan
    outcome: OptimizationOutcome


def build_flip_instance() -> FlipInstance:
    catalog = build_catalog(FLIP_CATALOG_DOC)
    plan = build_plan(
        [
            {"id": "src", "kind": "CollectionSource"},
            {"id": "filt", "kind": "Filter", "udf": "keep-hot"},
            {"id": "sink", "kind": "CollectionSink"},
        ],
        [{"from": "src", "to": "filt"}, {"from": "filt", "to": "sink"}],
    )
    ann = annotate(inflate(plan, catalog), catalog, FLIP_STATS)
    outcome = enumerate_plans(ann)
    return FlipInstance(catalog, plan, dict(FLIP_STATS), ann, outcome)


@pytest.fixture()
def flip() -> FlipInstance:
    return build_flip_instance()


def random_ccg(seed: int):
    """Seeded random conversion graph with integer edge costs 1..10, a root,
    and up to three target sets; used against the brute-force oracle."""
    rng = random.Random(seed)
    n = rng.randint(2, 8)
    channels = [Channel(f"C{i}", rng.random() < 0.5) for i in range(n)]
    edges = []
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < 0.3:
                edges.append(
                    ConversionEdge(
                        f"C{i}",
                        f"C{j}",
                        static_cost=IntervalEstimate.exact(float(rng.randint(1, 10))),
                    )
                )
    graph = ChannelConversionGraph(channels, edges)
    root = f"C{rng.randrange(n)}"
    sets = []
    for _ in range(rng.randint(1, 3)):
        k = rng.randint(1, min(3, n))
        sets.append(frozenset(rng.sample([c.id for c in channels], k)))
    return graph, root, sets


def random_ccg_mergeable(seed: int):
    """Like random_ccg, but the target list repeats one set 2-3 times with at
    least one reusable member, so kernelization always has something to merge."""
    rng = random.Random(seed)
    n = rng.randint(3, 8)
    forced = {rng.randrange(n), rng.randrange(n)}
    channels = [Channel(f"C{i}", i in forced or rng.random() < 0.4) for i in range(n)]
    edges = []
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < 0.3:
                edges.append(
                    ConversionEdge(
                        f"C{i}",
                        f"C{j}",
                        static_cost=IntervalEstimate.exact(float(rng.randint(1, 10))),
                    )
                )
    graph = ChannelConversionGraph(channels, edges)
    root = f"C{rng.randrange(n)}"
    reusable_ids = [c.id for c in channels if c.reusable]
    non_ids = [c.id for c in channels if not c.reusable]
    base = {rng.choice(reusable_ids)}
    if non_ids and rng.random() < 0.5:
        base.add(rng.choice(non_ids))
    if len(reusable_ids) > 1 and rng.random() < 0.5:
        base.add(rng.choice(reusable_ids))
    sets = [frozenset(base)] * rng.randint(2, 3)
    if rng.random() < 0.6:
        k = rng.randint(1, min(3, n))
        sets.append(frozenset(rng.sample([c.id for c in channels], k)))
    return graph, root, sets
