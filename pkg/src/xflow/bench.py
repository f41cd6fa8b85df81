"""Benchmark harness over synthetic topologies, reporting CSV rows.

One row per (topology, n, k, rule, seed) combination. Rules are the pruning
rules plus "exhaustive" for the oracle. Runs that trip a size guard are
reported as status=skipped rows instead of failing the whole suite. Synthetic
instances come pre-annotated, so generation time is reported in the inflation
column and cardinality estimation is zero; timings for real catalogs come
from the optimize command instead.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .enumeration import (
    PruneRule,
    enumerate_plans,
    exhaustive_enumerate,
    generate_topology,
)
from .errors import InputError, InstanceTooLargeError

TOPOLOGIES = ("pipeline", "fanout", "tree", "random")

METRIC_COLUMNS = ("cost", "plans_denoted", "pairs", "mct_queries")
TIMING_COLUMNS = ("inflate_ms", "cards_ms", "movement_ms", "enum_ms", "total_ms")
COLUMNS = ("topology", "n", "k", "rule", "seed", "status") + METRIC_COLUMNS + TIMING_COLUMNS

DEFAULT_PAIR_BUDGET = 5_000_000


@dataclass(frozen=True)
class BenchRow:
    topology: str
    n: int
    k: int
    rule: str
    seed: int
    status: str  # "ok" | "skipped"
    cost: float | None
    plans_denoted: int | None
    pairs: int | None
    mct_queries: int | None
    inflate_ms: float
    cards_ms: float
    movement_ms: float
    enum_ms: float

    @property
    def total_ms(self) -> float:
        return self.inflate_ms + self.cards_ms + self.movement_ms + self.enum_ms

    def cells(self, timing: bool = True) -> list[str]:
        def num(v) -> str:
            if v is None:
                return ""
            if isinstance(v, float):
                return f"{v:.10g}"
            return str(v)

        row = [
            self.topology,
            str(self.n),
            str(self.k),
            self.rule,
            str(self.seed),
            self.status,
            num(self.cost),
            num(self.plans_denoted),
            num(self.pairs),
            num(self.mct_queries),
        ]
        if timing:
            row += [
                f"{self.inflate_ms:.3f}",
                f"{self.cards_ms:.3f}",
                f"{self.movement_ms:.3f}",
                f"{self.enum_ms:.3f}",
                f"{self.total_ms:.3f}",
            ]
        return row


def run_one(
    topology: str,
    n: int,
    k: int,
    rule: str,
    seed: int = 0,
    platforms: int | None = None,
    max_pairs: int | None = DEFAULT_PAIR_BUDGET,
) -> BenchRow:
    t0 = time.perf_counter()
    ann = generate_topology(topology, n, k, seed=seed, platforms=platforms)
    gen_ms = (time.perf_counter() - t0) * 1000.0

    def skipped() -> BenchRow:
        return BenchRow(
            topology, n, k, rule, seed, "skipped",
            cost=None, plans_denoted=ann.denoted_plan_count(), pairs=None,
            mct_queries=None, inflate_ms=gen_ms, cards_ms=0.0,
            movement_ms=0.0, enum_ms=0.0,
        )

    t1 = time.perf_counter()
    if rule == "exhaustive":
        try:
            res = exhaustive_enumerate(ann)
        except InstanceTooLargeError:
            return skipped()
        wall_ms = (time.perf_counter() - t1) * 1000.0
        move_ms = ann.ctx.seconds * 1000.0
        return BenchRow(
            topology, n, k, rule, seed, "ok",
            cost=res.cost.midpoint, plans_denoted=res.denoted, pairs=0,
            mct_queries=ann.ctx.queries, inflate_ms=gen_ms, cards_ms=0.0,
            movement_ms=move_ms, enum_ms=max(wall_ms - move_ms, 0.0),
        )

    prune_rule = PruneRule.parse(rule)
    try:
        outcome = enumerate_plans(ann, prune_rule, max_pairs=max_pairs)
    except InstanceTooLargeError:
        return skipped()
    wall_ms = (time.perf_counter() - t1) * 1000.0
    move_ms = ann.ctx.seconds * 1000.0
    return BenchRow(
        topology, n, k, rule, seed, "ok",
        cost=outcome.total_scalar, plans_denoted=outcome.denoted,
        pairs=outcome.counters["pairs"], mct_queries=outcome.counters["mct_queries"],
        inflate_ms=gen_ms, cards_ms=0.0,
        movement_ms=move_ms, enum_ms=max(wall_ms - move_ms, 0.0),
    )


def run_bench(
    topologies,
    sizes,
    k: int,
    rules,
    seed: int = 0,
    platforms: int | None = None,
    max_pairs: int | None = DEFAULT_PAIR_BUDGET,
) -> list[BenchRow]:
    for t in topologies:
        if t not in TOPOLOGIES:
            raise InputError(
                f"unknown topology '{t}' (known: {', '.join(TOPOLOGIES)})"
            )
    rows = []
    for topology in topologies:
        for n in sizes:
            for rule in rules:
                rows.append(
                    run_one(
                        topology, n, k, rule,
                        seed=seed, platforms=platforms, max_pairs=max_pairs,
                    )
                )
    return rows


def render_csv(rows, timing: bool = True) -> str:
    header = list(COLUMNS if timing else COLUMNS[: -len(TIMING_COLUMNS)])
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(row.cells(timing)))
    return "\n".join(lines) + "\n"
