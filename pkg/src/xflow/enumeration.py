"""Plan-space enumeration: singleton/join/prune algebra over inflated plans.

An enumeration is a scope (set of plan operators) plus subplans, each
assigning one executable alternative to every scope member. Joining two
enumerations concatenates assignments pairwise and, for every plan output
whose producer and consumers all just became in-scope, stitches a minimum
conversion tree from the producer's output channel to the consumers' accepted
channel sets. The full algorithm merges join groups (one per multi-party
output) cheapest-boundary-first until a single complete enumeration remains.

Start-up costs are charged once per platform at complete-plan costing and
excluded from within-class comparisons during lossless pruning (platform sets
are part of the class key, so the exclusion is sound).
"""

from __future__ import annotations

import itertools
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

from .ccg import ChannelConversionGraph, ConversionTree, find_mct
from .cost import IntervalEstimate, estimate_cardinalities, estimate_outputs, sum_intervals
from .errors import (
    InputError,
    InstanceTooLargeError,
    NoConversionTreeError,
    NoExecutableFullPlanError,
)
from .mappings import Alternative, InflatedPlan, _atomic_alternative
from .plan import (
    KIND_SHAPES,
    DataflowPlan,
    Edge,
    ExecEdge,
    ExecNode,
    ExecutionOperator,
    ExecutionPlan,
    Operator,
    OperatorKind,
    multiplicities,
)

EXHAUSTIVE_GUARD = 1_000_000


@dataclass(frozen=True)
class PruneRule:
    kind: str  # "lossless" | "topk" | "none"
    k: int = 0

    @classmethod
    def parse(cls, text: str) -> "PruneRule":
        t = text.strip().lower()
        if t == "lossless":
            return cls("lossless")
        if t == "none":
            return cls("none")
        if t.startswith("topk:"):
            try:
                k = int(t.split(":", 1)[1])
            except ValueError:
                raise InputError(f"bad prune rule '{text}': topk needs an integer") from None
            if k < 1:
                raise InputError(f"bad prune rule '{text}': k must be >= 1")
            return cls("topk", k)
        raise InputError(f"bad prune rule '{text}' (expected lossless, topk:K or none)")

    def __str__(self) -> str:
        return f"topk:{self.k}" if self.kind == "topk" else self.kind


LOSSLESS = PruneRule("lossless")
NO_PRUNE = PruneRule("none")


@dataclass
class Counters:
    pairs: int = 0
    joins: int = 0


class StitchContext:
    """Memoized movement planning: one MCT query per distinct
    (root channel, consumer target-set tuple, cardinality) combination."""

    def __init__(
        self,
        graph: ChannelConversionGraph,
        target_sets: list[frozenset[str]],
        edge_bits: Mapping[tuple[str, str], int],
    ):
        self.graph = graph
        self.target_sets = target_sets
        self.edge_bits = edge_bits
        self.memo: dict = {}
        self.queries = 0
        self.hits = 0
        self.seconds = 0.0

    def stitch(
        self, root: str, target_ids: tuple[int, ...], card: IntervalEstimate
    ) -> tuple[float, float, float, int, ConversionTree] | None:
        key = (root, target_ids, card.low, card.high, card.confidence)
        if key in self.memo:
            self.hits += 1
            return self.memo[key]
        self.queries += 1
        started = time.perf_counter()
        try:
            tree = find_mct(self.graph, root, [self.target_sets[i] for i in target_ids], card)
        except NoConversionTreeError:
            self.memo[key] = None
            self.seconds += time.perf_counter() - started
            return None
        bits = 0
        for pair in tree.edges:
            bits |= self.edge_bits.get(pair, 0)
        out = (tree.cost.low, tree.cost.high, tree.cost.confidence, bits, tree)
        self.seconds += time.perf_counter() - started
        self.memo[key] = out
        return out


class AnnotatedPlan:
    """An inflated plan with everything enumeration needs precomputed:
    per-alternative costs (already multiplied by loop iteration counts),
    interned accepted-channel sets, output channels, platform bitmasks, the
    consumer map per output, and a shared stitch context."""

    def __init__(
        self,
        inflated: InflatedPlan,
        cards: Mapping[tuple[str, int], IntervalEstimate],
        mult: Mapping[str, float],
        alt_costs: Mapping[tuple[str, int], IntervalEstimate],
        startups: Mapping[str, float],
        graph: ChannelConversionGraph,
        edge_platforms: Mapping[tuple[str, str], str],
        conv_ops: Mapping[tuple[str, str], ExecutionOperator] | None = None,
        recost: Callable[[str, Alternative, Mapping], IntervalEstimate] | None = None,
    ):
        self.inflated = inflated
        self.plan: DataflowPlan = inflated.plan
        self.cards = dict(cards)
        self.mult = dict(mult)
        self.edge_platforms = dict(edge_platforms)
        self._conv_ops = dict(conv_ops) if conv_ops else {}
        # Reprice one alternative under different cardinalities (progressive
        # re-optimization); None means costs do not depend on cardinalities.
        self.recost = recost

        plat_names = set(startups)
        for inflated_op in inflated.operators.values():
            for alt in inflated_op.alternatives:
                plat_names.update(alt.platforms)
        plat_names.update(edge_platforms.values())
        self.platforms: tuple[str, ...] = tuple(sorted(plat_names))
        self.bit = {p: 1 << i for i, p in enumerate(self.platforms)}
        self.startups = {p: float(startups.get(p, 0.0)) for p in self.platforms}
        self._startup_of_bits: dict[int, float] = {0: 0.0}

        self._set_ids: dict[frozenset[str], int] = {}
        self.target_sets: list[frozenset[str]] = []

        self.order: tuple[str, ...] = tuple(sorted(self.plan.operators))
        self.pos = {op: i for i, op in enumerate(self.order)}
        self.alts: dict[str, tuple[Alternative, ...]] = {
            op: inflated.operators[op].alternatives for op in self.order
        }

        self.alt_cost: dict[tuple[str, int], tuple[float, float, float]] = {}
        self.alt_bits: dict[tuple[str, int], int] = {}
        self.accept_id: dict[tuple[str, int, int], int] = {}
        self.out_channel: dict[tuple[str, int, int], str] = {}
        for op in self.order:
            kind = self.plan.op(op).kind
            for ai, alt in enumerate(self.alts[op]):
                iv = alt_costs[(op, ai)]
                self.alt_cost[(op, ai)] = (iv.low, iv.high, iv.confidence)
                bits = 0
                for p in alt.platforms:
                    bits |= self.bit[p]
                self.alt_bits[(op, ai)] = bits
                for slot in range(kind.arity_in):
                    self.accept_id[(op, ai, slot)] = self._intern(alt.accepted(slot))
                for slot in range(kind.arity_out):
                    self.out_channel[(op, ai, slot)] = alt.output_channel(slot)

        self.outputs: dict[tuple[str, int], tuple[tuple[str, int], ...]] = {}
        self.out_edge: dict[tuple[str, int, str, int], Edge] = {}
        grouped: dict[tuple[str, int], list[tuple[str, int]]] = {}
        for e in self.plan.edges:
            grouped.setdefault((e.src, e.src_slot), []).append((e.dst, e.dst_slot))
            self.out_edge[(e.src, e.src_slot, e.dst, e.dst_slot)] = e
        for op, slot in self.plan.output_slots():
            self.outputs[(op, slot)] = tuple(sorted(grouped.get((op, slot), [])))

        self.out_mult: dict[tuple[str, int], float] = {}
        self.participants: dict[tuple[str, int], frozenset[str]] = {}
        for out, consumers in self.outputs.items():
            members = {out[0]} | {c for c, _ in consumers}
            self.participants[out] = frozenset(members)
            self.out_mult[out] = max(self.mult[m] for m in members)

        self.adjacency: dict[str, frozenset[str]] = {}
        partner: dict[str, set[str]] = {op: set() for op in self.order}
        for e in self.plan.edges:
            partner[e.src].add(e.dst)
            partner[e.dst].add(e.src)
        for op in self.order:
            self.adjacency[op] = frozenset(partner[op])

        self.touching: dict[str, list[tuple[str, int]]] = {op: [] for op in self.order}
        for out, members in self.participants.items():
            for op in members:
                self.touching[op].append(out)
        for lst in self.touching.values():
            lst.sort()

        edge_bits = {
            pair: self.bit[p] for pair, p in edge_platforms.items() if p in self.bit
        }
        self.ctx = StitchContext(graph, self.target_sets, edge_bits)

    def _intern(self, target_set: frozenset[str]) -> int:
        got = self._set_ids.get(target_set)
        if got is None:
            got = len(self.target_sets)
            self._set_ids[target_set] = got
            self.target_sets.append(target_set)
        return got

    def conversion_op(self, src: str, dst: str) -> ExecutionOperator:
        got = self._conv_ops.get((src, dst))
        if got is None:
            # Hand-built graphs without conversion operators (static edge
            # costs) still materialize; the stub keeps the channel contract.
            got = ExecutionOperator(
                id=f"convert:{src}>{dst}",
                platform=self.edge_platforms.get((src, dst), ""),
                implements="",
                input_channels=frozenset((src,)),
                output_channel=dst,
                cost_function_ref="",
            )
            self._conv_ops[(src, dst)] = got
        return got

    def startup_of_bits(self, bits: int) -> float:
        got = self._startup_of_bits.get(bits)
        if got is None:
            got = sum(
                self.startups[p] for p in self.platforms if bits & self.bit[p]
            )
            self._startup_of_bits[bits] = got
        return got

    def platforms_of_bits(self, bits: int) -> tuple[str, ...]:
        return tuple(p for p in self.platforms if bits & self.bit[p])

    def denoted_plan_count(self) -> int:
        return self.inflated.denoted_plan_count()


class Subplan(NamedTuple):
    assign: tuple[int, ...]
    op_lo: float
    op_hi: float
    conv_lo: float
    conv_hi: float
    conf: float
    bits: int

    def core_key(self) -> tuple[float, float]:
        lo = self.op_lo + self.conv_lo
        hi = self.op_hi + self.conv_hi
        return ((lo + hi) / 2.0, lo)


class Enumeration(NamedTuple):
    scope: frozenset[str]
    order: tuple[str, ...]
    stitched: frozenset[tuple[str, int]]
    subplans: tuple[Subplan, ...]


def total_key(ann: AnnotatedPlan, sp: Subplan) -> tuple[float, float]:
    startup = ann.startup_of_bits(sp.bits)
    lo = sp.op_lo + sp.conv_lo + startup
    hi = sp.op_hi + sp.conv_hi + startup
    return ((lo + hi) / 2.0, lo)


def plan_cost(ann: AnnotatedPlan, sp: Subplan) -> IntervalEstimate:
    """Complete-plan cost: operators + movement + one start-up per platform."""
    startup = ann.startup_of_bits(sp.bits)
    return IntervalEstimate(
        sp.op_lo + sp.conv_lo + startup, sp.op_hi + sp.conv_hi + startup, sp.conf
    )


def singleton(ann: AnnotatedPlan, op: str) -> Enumeration:
    kind = ann.plan.op(op).kind
    stitched = frozenset(
        (op, slot)
        for slot in range(kind.arity_out)
        if not ann.outputs[(op, slot)]
    )
    subplans = tuple(
        Subplan(
            (ai,),
            ann.alt_cost[(op, ai)][0],
            ann.alt_cost[(op, ai)][1],
            0.0,
            0.0,
            ann.alt_cost[(op, ai)][2],
            ann.alt_bits[(op, ai)],
        )
        for ai in range(len(ann.alts[op]))
    )
    return Enumeration(frozenset((op,)), (op,), stitched, subplans)


def join(
    ann: AnnotatedPlan,
    e1: Enumeration,
    e2: Enumeration,
    counters: Counters | None = None,
) -> Enumeration:
    """Product of two disjoint enumerations, stitching every output whose
    producer and consumers all lie in the union scope. Pairs with no feasible
    conversion tree for some output are dropped."""
    if e1.scope & e2.scope:
        raise InputError("join requires disjoint scopes")
    if counters is not None:
        counters.joins += 1
    scope = e1.scope | e2.scope
    order = tuple(sorted(scope))
    pos1 = {op: i for i, op in enumerate(e1.order)}
    pos2 = {op: i for i, op in enumerate(e2.order)}
    picks: list[tuple[bool, int]] = []
    for op in order:
        if op in pos1:
            picks.append((True, pos1[op]))
        else:
            picks.append((False, pos2[op]))

    already = e1.stitched | e2.stitched
    smaller = e1 if len(e1.scope) <= len(e2.scope) else e2
    candidates: set[tuple[str, int]] = set()
    for op in smaller.scope:
        for out in ann.touching[op]:
            if out not in already and ann.participants[out] <= scope:
                candidates.add(out)
    newly = sorted(candidates)

    # Precompute, per freshly completed output, where its producer and
    # consumers live so the inner pair loop stays index arithmetic.
    stitch_specs = []
    for out in newly:
        producer, pslot = out
        p_side1 = producer in e1.scope
        p_pos = pos1[producer] if p_side1 else pos2[producer]
        consumers = []
        for (cop, cslot) in ann.outputs[out]:
            c_side1 = cop in e1.scope
            consumers.append((c_side1, pos1[cop] if c_side1 else pos2[cop], cop, cslot))
        stitch_specs.append((out, p_side1, p_pos, pslot, producer, consumers))

    ctx = ann.ctx
    subplans: list[Subplan] = []
    n_pairs = 0
    for sp1 in e1.subplans:
        for sp2 in e2.subplans:
            n_pairs += 1
            bits = sp1.bits | sp2.bits
            conv_lo = sp1.conv_lo + sp2.conv_lo
            conv_hi = sp1.conv_hi + sp2.conv_hi
            conf = min(sp1.conf, sp2.conf)
            feasible = True
            for (out, p_side1, p_pos, pslot, producer, consumers) in stitch_specs:
                p_ai = sp1.assign[p_pos] if p_side1 else sp2.assign[p_pos]
                root = ann.out_channel[(producer, p_ai, pslot)]
                tids = tuple(
                    ann.accept_id[(cop, (sp1.assign[cp] if c1 else sp2.assign[cp]), cslot)]
                    for (c1, cp, cop, cslot) in consumers
                )
                res = ctx.stitch(root, tids, ann.cards[out])
                if res is None:
                    feasible = False
                    break
                scale = ann.out_mult[out]
                conv_lo += res[0] * scale
                conv_hi += res[1] * scale
                conf = min(conf, res[2])
                bits |= res[3]
            if not feasible:
                continue
            assign = tuple(
                (sp1.assign[i] if side1 else sp2.assign[i]) for (side1, i) in picks
            )
            subplans.append(
                Subplan(
                    assign,
                    sp1.op_lo + sp2.op_lo,
                    sp1.op_hi + sp2.op_hi,
                    conv_lo,
                    conv_hi,
                    conf,
                    bits,
                )
            )
    if counters is not None:
        counters.pairs += n_pairs
    return Enumeration(scope, order, already | frozenset(newly), tuple(subplans))


def prune(
    ann: AnnotatedPlan,
    enum: Enumeration,
    rule: PruneRule,
    removed: list[tuple[tuple[str, ...], tuple[int, ...]]] | None = None,
) -> Enumeration:
    """Apply a pruning rule.

    Lossless keeps one cheapest subplan per (boundary-operator alternatives,
    platform set, per-pending-output multiset of in-scope consumer channel
    sets) class. The pending-output component covers outputs some of whose
    consumers are still out of scope: their eventual conversion tree depends
    on the in-scope consumers only through that multiset. TopK ranks by
    complete cost including start-up; None is the identity.
    """
    if rule.kind == "none" or len(enum.subplans) <= 1:
        return enum
    if rule.kind == "topk":
        ranked = sorted(enum.subplans, key=lambda sp: (total_key(ann, sp), sp.assign))
        kept = ranked[: rule.k]
        if removed is not None:
            removed.extend((enum.order, sp.assign) for sp in ranked[rule.k :])
        return Enumeration(enum.scope, enum.order, enum.stitched, tuple(kept))

    scope = enum.scope
    order_pos = {op: i for i, op in enumerate(enum.order)}
    boundary_pos = [i for i, op in enumerate(enum.order) if ann.adjacency[op] - scope]
    pending_outs: set[tuple[str, int]] = set()
    for op in enum.order:
        for out in ann.touching[op]:
            if out[0] in scope and out not in enum.stitched:
                pending_outs.add(out)
    pending_specs = [
        [(order_pos[cop], cslot) for (cop, cslot) in ann.outputs[out] if cop in scope]
        for out in sorted(pending_outs)
    ]

    best: dict[tuple, Subplan] = {}
    best_rank: dict[tuple, tuple] = {}
    dropped: list[tuple[tuple, Subplan]] = []
    for sp in enum.subplans:
        klass = (
            tuple(sp.assign[i] for i in boundary_pos),
            sp.bits,
            tuple(
                tuple(
                    sorted(
                        ann.accept_id[(enum.order[p], sp.assign[p], slot)]
                        for (p, slot) in spec
                    )
                )
                for spec in pending_specs
            ),
        )
        rank = (sp.core_key(), sp.assign)
        cur = best_rank.get(klass)
        if cur is None:
            best[klass], best_rank[klass] = sp, rank
        elif rank < cur:
            dropped.append((klass, best[klass]))
            best[klass], best_rank[klass] = sp, rank
        else:
            dropped.append((klass, sp))
    if removed is not None:
        # Only strictly costlier discards are recorded: equal-cost ties are
        # interchangeable for cost optimality, but either one may appear in
        # some optimal plan, so ties are not claimed as safely pruned.
        for klass, sp in dropped:
            if best[klass].core_key() < sp.core_key():
                removed.append((enum.order, sp.assign))
    kept = sorted(best.values(), key=lambda sp: (sp.core_key(), sp.assign))
    return Enumeration(enum.scope, enum.order, enum.stitched, tuple(kept))


def annotate(inflated: InflatedPlan, catalog, source_stats: Mapping) -> AnnotatedPlan:
    """Cost-annotate an inflated plan against a catalog: cardinalities from
    the source statistics, per-alternative costs multiplied by enclosing-loop
    iteration counts, movement priced through the catalog's conversion graph."""
    plan = inflated.plan
    cards = estimate_cardinalities(plan, source_stats)
    mult = multiplicities(plan)
    model = catalog.model()

    alt_costs: dict[tuple[str, int], IntervalEstimate] = {}
    for op_id in sorted(plan.operators):
        op = plan.operators[op_id]
        ext_inputs: list[IntervalEstimate] = []
        for slot in range(op.kind.arity_in):
            edge = next(e for e in plan.in_edges(op_id) if e.dst_slot == slot)
            ext_inputs.append(cards[(edge.src, edge.src_slot)])
        own_out = cards.get((op_id, 0))
        for ai, alt in enumerate(inflated.operators[op_id].alternatives):
            raw = _alternative_cost(op, alt, ext_inputs, own_out, model)
            alt_costs[(op_id, ai)] = raw.scaled(mult[op_id])

    startups = {p: prof.startup_cost for p, prof in catalog.profiles.items()}
    conv_ops = {pair: catalog.conversion_operator(*pair) for pair in catalog.graph().edges}

    def recost(op_id: str, alt: Alternative, new_cards: Mapping) -> IntervalEstimate:
        op = plan.operators[op_id]
        ext = []
        for slot in range(op.kind.arity_in):
            edge = next(e for e in plan.in_edges(op_id) if e.dst_slot == slot)
            ext.append(new_cards[(edge.src, edge.src_slot)])
        return _alternative_cost(op, alt, ext, new_cards.get((op_id, 0)), model)

    return AnnotatedPlan(
        inflated,
        cards,
        mult,
        alt_costs,
        startups,
        catalog.graph(),
        catalog.edge_platforms(),
        conv_ops,
        recost=recost,
    )


def _alternative_cost(
    op: Operator,
    alt: Alternative,
    ext_inputs: Sequence[IntervalEstimate],
    own_out: IntervalEstimate | None,
    model,
) -> IntervalEstimate:
    """Cost of one alternative: member costs summed, each driven by the sum of
    the member's input cardinalities (a source member is driven by the plan
    operator's own output estimate). Internal cardinalities follow the member
    kinds' estimation rules; the original operator's selectivity hint applies
    only to members of its own kind."""
    member_in: dict[tuple[str, int], IntervalEstimate] = {}
    for s, iv in enumerate(ext_inputs):
        member_in[alt.route_input(s)] = iv

    total = IntervalEstimate.zero()
    for local in alt.member_order():
        mop = alt.member(local).op
        kind_name = mop.implements
        base_in, _variadic, arity_out = KIND_SHAPES[kind_name]
        wired = sorted(
            (slot, iv) for (l, slot), iv in member_in.items() if l == local
        )
        if base_in == 0:
            if own_out is None:
                raise InputError(
                    f"source member '{local}' of '{op.id}' has no output estimate"
                )
            driver = own_out
            outs = [own_out] * max(arity_out, 1)
        else:
            inputs = []
            for slot in range(base_in):
                iv = member_in.get((local, slot))
                if iv is None:
                    raise InputError(
                        f"alternative for '{op.id}': member '{local}' input slot {slot} unwired"
                    )
                inputs.append(iv)
            driver = sum_intervals(iv for _slot, iv in wired)
            kind = OperatorKind(
                name=kind_name,
                arity_in=base_in,
                arity_out=arity_out,
                udf=op.kind.udf,
                selectivity=op.kind.selectivity if kind_name == op.kind.name else None,
                iterations=op.kind.iterations if kind_name == op.kind.name else None,
            )
            outs = estimate_outputs(kind, inputs)
        total = total + model.cost(mop, driver)
        for (s, ss, d, ds) in alt.edges:
            if s == local:
                member_in[(d, ds)] = outs[ss]
    return total


class OptimizationOutcome(NamedTuple):
    rule: PruneRule
    assignment: dict[str, int]
    cost: IntervalEstimate
    operators_cost: IntervalEstimate
    movement_cost: IntervalEstimate
    startup_cost: float
    platforms: tuple[str, ...]
    execution_plan: ExecutionPlan
    edge_cards: dict[tuple, IntervalEstimate]
    edge_outputs: dict[tuple, tuple[str, int]]
    counters: dict[str, int]
    denoted: int

    @property
    def total_scalar(self) -> float:
        return (
            self.operators_cost.midpoint + self.movement_cost.midpoint + self.startup_cost
        )


def enumerate_plans(
    ann: AnnotatedPlan,
    rule: PruneRule = LOSSLESS,
    *,
    record_pruned: list | None = None,
    order_rng: random.Random | None = None,
    max_pairs: int | None = None,
) -> OptimizationOutcome:
    """Join-group enumeration: singletons, then repeatedly merge the group
    around one producer output, cheapest boundary first, pruning as we go.

    Under the lossless rule every pairwise join is followed by a prune; other
    rules prune once per group so their search behavior matches their
    definition (TopK ranks whole group products, None keeps everything).
    `order_rng`, when given, polls groups in random order instead; the final
    cost must not depend on it.
    """
    counters = Counters()
    owner: dict[str, Enumeration] = {}
    for op in ann.order:
        owner[op] = prune(ann, singleton(ann, op), rule, record_pruned)

    pending = [out for out in sorted(ann.outputs) if ann.outputs[out]]
    while pending:
        ready = []
        for out in pending:
            distinct = {id(owner[m]) for m in ann.participants[out]}
            if len(distinct) > 1:
                ready.append(out)
        if not ready:
            break

        def _score(out: tuple[str, int]):
            union: frozenset[str] = frozenset().union(
                *(owner[m].scope for m in ann.participants[out])
            )
            boundary = sum(1 for o in union if ann.adjacency[o] - union)
            return (boundary, len(union), tuple(sorted(union)))

        if order_rng is None:
            target = min(ready, key=_score)
        else:
            target = ready[order_rng.randrange(len(ready))]
        pending = [out for out in pending if out != target]

        members: list[Enumeration] = []
        seen = set()
        for m in (target[0], *(c for c, _ in ann.outputs[target])):
            e = owner[m]
            if id(e) not in seen:
                seen.add(id(e))
                members.append(e)
        # The producer-side enumeration leads the fold so intermediate scopes
        # always contain the producer; consumer-only scopes would make every
        # consumer a boundary operator and defeat pruning.
        acc, rest = members[0], sorted(members[1:], key=lambda e: e.order)
        for nxt in rest:
            if max_pairs is not None and len(acc.subplans) * len(nxt.subplans) > max_pairs:
                raise InstanceTooLargeError(
                    f"join product exceeds the configured pair budget ({max_pairs})"
                )
            acc = join(ann, acc, nxt, counters)
            if rule.kind == "lossless":
                acc = prune(ann, acc, rule, record_pruned)
        if rule.kind != "lossless":
            acc = prune(ann, acc, rule, record_pruned)
        for o in acc.scope:
            owner[o] = acc

    distinct: list[Enumeration] = []
    seen = set()
    for op in ann.order:
        e = owner[op]
        if id(e) not in seen:
            seen.add(id(e))
            distinct.append(e)
    distinct.sort(key=lambda e: e.order)
    acc = distinct[0]
    for nxt in distinct[1:]:
        if max_pairs is not None and len(acc.subplans) * len(nxt.subplans) > max_pairs:
            raise InstanceTooLargeError(
                f"join product exceeds the configured pair budget ({max_pairs})"
            )
        acc = join(ann, acc, nxt, counters)
        acc = prune(ann, acc, rule, record_pruned)

    if not acc.subplans:
        raise NoExecutableFullPlanError(
            "channel compatibility filtered out every complete execution plan"
        )
    winner = min(acc.subplans, key=lambda sp: (total_key(ann, sp), sp.assign))
    return build_outcome(ann, rule, {op: winner.assign[i] for i, op in enumerate(acc.order)},
                         winner, counters)


def build_outcome(
    ann: AnnotatedPlan,
    rule: PruneRule,
    assignment: dict[str, int],
    sp: Subplan,
    counters: Counters,
) -> OptimizationOutcome:
    startup = ann.startup_of_bits(sp.bits)
    plan, edge_cards, edge_outputs = materialize(ann, assignment)
    return OptimizationOutcome(
        rule=rule,
        assignment=assignment,
        cost=plan_cost(ann, sp),
        operators_cost=IntervalEstimate(sp.op_lo, sp.op_hi, sp.conf),
        movement_cost=IntervalEstimate(sp.conv_lo, sp.conv_hi, sp.conf),
        startup_cost=startup,
        platforms=ann.platforms_of_bits(sp.bits),
        execution_plan=plan,
        edge_cards=edge_cards,
        edge_outputs=edge_outputs,
        counters={
            "pairs": counters.pairs,
            "joins": counters.joins,
            "mct_queries": ann.ctx.queries,
            "mct_cache_hits": ann.ctx.hits,
        },
        denoted=ann.denoted_plan_count(),
    )


def materialize(
    ann: AnnotatedPlan, assignment: Mapping[str, int]
) -> tuple[ExecutionPlan, dict[tuple, IntervalEstimate], dict[tuple, tuple[str, int]]]:
    """Turn a complete assignment into an execution plan: alternative members
    become nodes, and each consumed output gets its conversion tree's
    operators and edges spliced between producer and consumers. Also maps each
    spliced edge to its cardinality and to the plan output it carries."""
    nodes: list[ExecNode] = []
    edges: list[ExecEdge] = []
    edge_cards: dict[tuple, IntervalEstimate] = {}
    edge_outputs: dict[tuple, tuple[str, int]] = {}

    def node_id(op: str, local: str) -> str:
        return f"{op}/{local}"

    for op in ann.order:
        alt = ann.alts[op][assignment[op]]
        for m in alt.members:
            nodes.append(ExecNode(node_id(op, m.local), m.op, implements=(op,)))
        for (s, ss, d, ds) in alt.edges:
            channel = alt.member(s).op.output_channel
            edges.append(ExecEdge(node_id(op, s), ss, node_id(op, d), ds, channel))

    for out in sorted(ann.outputs):
        consumers = ann.outputs[out]
        if not consumers:
            continue
        op, slot = out
        p_ai = assignment[op]
        root = ann.out_channel[(op, p_ai, slot)]
        tids = tuple(ann.accept_id[(c, assignment[c], cs)] for (c, cs) in consumers)
        res = ann.ctx.stitch(root, tids, ann.cards[out])
        if res is None:
            raise NoExecutableFullPlanError(
                f"no conversion tree for output {op}[{slot}] under the chosen alternatives"
            )
        tree: ConversionTree = res[4]
        exit_local, exit_slot = ann.alts[op][p_ai].route_output(slot)
        where: dict[str, tuple[str, int]] = {root: (node_id(op, exit_local), exit_slot)}
        children: dict[str, list[str]] = {}
        for (a, b) in tree.edges:
            children.setdefault(a, []).append(b)
        stack = [root]
        while stack:
            cur = stack.pop()
            for dst in sorted(children.get(cur, ())):
                conv = ann.conversion_op(cur, dst)
                cid = f"{op}.{slot}:{cur}>{dst}"
                nodes.append(ExecNode(cid, conv, implements=(), conversion=True))
                src_node, src_slot = where[cur]
                e = ExecEdge(src_node, src_slot, cid, 0, cur)
                edges.append(e)
                edge_cards[e.key()] = ann.cards[out]
                edge_outputs[e.key()] = out
                where[dst] = (cid, 0)
                stack.append(dst)
        for i, (cop, cslot) in enumerate(consumers):
            serving = tree.serves[i]
            src_node, src_slot = where[serving]
            entry_local, entry_slot = ann.alts[cop][assignment[cop]].route_input(cslot)
            orig = ann.out_edge[(op, slot, cop, cslot)]
            e = ExecEdge(
                src_node,
                src_slot,
                node_id(cop, entry_local),
                entry_slot,
                serving,
                feedback=orig.feedback,
            )
            edges.append(e)
            edge_cards[e.key()] = ann.cards[out]
            edge_outputs[e.key()] = out
    return ExecutionPlan(nodes, edges), edge_cards, edge_outputs


class ExhaustiveResult(NamedTuple):
    cost: IntervalEstimate
    assignment: dict[str, int]
    optima: tuple[tuple[int, ...], ...]
    feasible: int
    denoted: int

    def execution_plan(self, ann: AnnotatedPlan) -> ExecutionPlan:
        plan, _cards, _outs = materialize(ann, self.assignment)
        return plan


def exhaustive_enumerate(ann: AnnotatedPlan) -> ExhaustiveResult:
    """Oracle: walk every alternative assignment, price it with the same
    conventions as the algebra (including per-output conversion trees and
    per-platform start-up), and keep every cost-minimal assignment."""
    denoted = ann.denoted_plan_count()
    if denoted > EXHAUSTIVE_GUARD:
        raise InstanceTooLargeError(
            f"{denoted} denoted plans exceed the exhaustive guard ({EXHAUSTIVE_GUARD})"
        )
    outs = [(out, ann.outputs[out]) for out in sorted(ann.outputs) if ann.outputs[out]]
    pos = ann.pos
    ctx = ann.ctx

    best_rank: tuple | None = None
    best_cost: IntervalEstimate | None = None
    best_combo: tuple[int, ...] | None = None
    optima: list[tuple[int, ...]] = []
    feasible = 0
    for combo in itertools.product(*(range(len(ann.alts[op])) for op in ann.order)):
        lo = hi = 0.0
        conf = 1.0
        bits = 0
        for i, op in enumerate(ann.order):
            c_lo, c_hi, c_conf = ann.alt_cost[(op, combo[i])]
            lo += c_lo
            hi += c_hi
            conf = min(conf, c_conf)
            bits |= ann.alt_bits[(op, combo[i])]
        ok = True
        for (out, consumers) in outs:
            op, slot = out
            root = ann.out_channel[(op, combo[pos[op]], slot)]
            tids = tuple(
                ann.accept_id[(cop, combo[pos[cop]], cslot)] for (cop, cslot) in consumers
            )
            res = ctx.stitch(root, tids, ann.cards[out])
            if res is None:
                ok = False
                break
            scale = ann.out_mult[out]
            lo += res[0] * scale
            hi += res[1] * scale
            conf = min(conf, res[2])
            bits |= res[3]
        if not ok:
            continue
        feasible += 1
        startup = ann.startup_of_bits(bits)
        key = ((lo + hi) / 2.0 + startup, lo + startup)
        if best_rank is None or key < best_rank:
            best_rank = key
            best_cost = IntervalEstimate(lo + startup, hi + startup, conf)
            best_combo = combo
            optima = [combo]
        elif key == best_rank:
            optima.append(combo)
            if combo < best_combo:
                best_combo = combo
                best_cost = IntervalEstimate(lo + startup, hi + startup, conf)
    if best_rank is None:
        raise NoExecutableFullPlanError(
            "channel compatibility filtered out every complete execution plan"
        )
    return ExhaustiveResult(
        cost=best_cost,
        assignment={op: best_combo[i] for i, op in enumerate(ann.order)},
        optima=tuple(optima),
        feasible=feasible,
        denoted=denoted,
    )


def generate_topology(
    kind: str, n: int, k: int, seed: int = 0, platforms: int | None = None
) -> AnnotatedPlan:
    """Deterministic synthetic instance for benchmarks and oracles.

    Shapes: `pipeline` (a chain), `fanout` (one source, n-1 consumers of its
    single output), `tree` (complete binary join tree, leaves are sources),
    `random` (random DAG of Maps and Joins over one source). Every operator
    gets k alternatives spread round-robin over the platforms, with integer
    costs so optima compare exactly; conversions are integer-priced with a
    reusable materialized channel per platform.
    """
    if n < 1 or k < 1:
        raise InputError("generate_topology needs n >= 1 and k >= 1")
    if kind not in ("pipeline", "fanout", "tree", "random"):
        raise InputError(f"unknown topology kind '{kind}'")
    p = platforms if platforms is not None else min(k, 3)
    if p < 1:
        raise InputError("need at least one platform")
    rng = random.Random(f"{kind}|{n}|{k}|{p}|{seed}")
    ids = [f"op{i:03d}" for i in range(n)]

    operators: list[Operator] = []
    plan_edges: list[Edge] = []

    def mk(i: int, kind_name: str):
        base_in, _v, arity_out = KIND_SHAPES[kind_name]
        operators.append(
            Operator(ids[i], OperatorKind(kind_name, base_in, arity_out))
        )

    if kind == "pipeline":
        for i in range(n):
            if i == 0:
                mk(i, "CollectionSource")
            elif i == n - 1 and n > 1:
                mk(i, "CollectionSink")
            else:
                mk(i, "Map")
        for i in range(n - 1):
            plan_edges.append(Edge(ids[i], 0, ids[i + 1], 0))
    elif kind == "fanout":
        mk(0, "CollectionSource")
        for i in range(1, n):
            mk(i, "CollectionSink")
            plan_edges.append(Edge(ids[0], 0, ids[i], 0))
    elif kind == "tree":
        # Heap numbering, 1-based: node i's children are 2i and 2i+1.
        for i in range(1, n + 1):
            n_children = (2 * i <= n) + (2 * i + 1 <= n)
            mk(i - 1, "CollectionSource" if n_children == 0 else ("Map" if n_children == 1 else "Join"))
        for i in range(1, n + 1):
            for si, child in enumerate((2 * i, 2 * i + 1)):
                if child <= n:
                    plan_edges.append(Edge(ids[child - 1], 0, ids[i - 1], si))
    else:  # random
        mk(0, "CollectionSource")
        for i in range(1, n):
            arity = 2 if (i >= 2 and rng.random() < 0.35) else 1
            producers = rng.sample(range(i), arity)
            mk(i, "Join" if arity == 2 else "Map")
            for slot, producer in enumerate(producers):
                plan_edges.append(Edge(ids[producer], 0, ids[i], slot))

    plan = DataflowPlan(operators, plan_edges)
    stats = {
        op.id: IntervalEstimate.exact(1000.0)
        for op in operators
        if op.kind.arity_in == 0
    }
    cards = estimate_cardinalities(plan, stats)
    mult = multiplicities(plan)

    from .ccg import Channel, ConversionEdge

    channels = []
    conv_edges = []
    edge_platforms: dict[tuple[str, str], str] = {}
    conv_ops: dict[tuple[str, str], ExecutionOperator] = {}
    for j in range(p):
        channels.append(Channel(f"N{j}", reusable=False))
        channels.append(Channel(f"M{j}", reusable=True))

    def conv(src: str, dst: str, platform: str, cost: int):
        conv_edges.append(
            ConversionEdge(src, dst, static_cost=IntervalEstimate.exact(float(cost)))
        )
        edge_platforms[(src, dst)] = platform
        conv_ops[(src, dst)] = ExecutionOperator(
            id=f"mv:{src}>{dst}",
            platform=platform,
            implements="",
            input_channels=frozenset((src,)),
            output_channel=dst,
            cost_function_ref="move",
        )

    for j in range(p):
        conv(f"N{j}", f"M{j}", f"P{j}", rng.randint(1, 5))
    for j in range(p):
        for l in range(p):
            if j != l:
                conv(f"M{j}", f"N{l}", f"P{l}", rng.randint(2, 20))

    graph = ChannelConversionGraph(channels, conv_edges)
    startups = {f"P{j}": float(rng.randint(0, 40)) for j in range(p)}

    from .mappings import InflatedOperator

    inflated_ops: dict[str, InflatedOperator] = {}
    alt_costs: dict[tuple[str, int], IntervalEstimate] = {}
    for op in operators:
        alts = []
        for j in range(k):
            pj = j % p
            exec_op = ExecutionOperator(
                id=f"{op.id}@a{j}",
                platform=f"P{pj}",
                implements=op.kind.name,
                input_channels=frozenset((f"N{pj}", f"M{pj}")),
                output_channel=None if op.kind.arity_out == 0 else f"N{pj}",
                cost_function_ref="synthetic",
            )
            alts.append(_atomic_alternative(exec_op))
            alt_costs[(op.id, j)] = IntervalEstimate.exact(float(rng.randint(1, 100)))
        inflated_ops[op.id] = InflatedOperator(original=op, alternatives=tuple(alts))

    inflated = InflatedPlan(plan, inflated_ops)
    return AnnotatedPlan(
        inflated, cards, mult, alt_costs, startups, graph, edge_platforms, conv_ops
    )
