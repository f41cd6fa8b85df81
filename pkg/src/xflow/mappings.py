"""Operator mappings: from abstract operators to platform alternatives.

A mapping pairs a graph pattern with a substitution. Matching binds pattern
nodes to plan operators (kind equality plus optional UDF-presence
predicates). Inflation replaces each operator with the set of executable
alternatives reachable through mapping chains: a substitute may itself
contain abstract operators, which are decomposed recursively (depth-capped)
and composed member-by-member, keeping only combinations whose internal
edges are directly channel-compatible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

from .errors import CatalogError, MappingDepthError, UncoverableOperatorError
from .plan import DataflowPlan, ExecutionOperator, Operator, OperatorKind

if TYPE_CHECKING:  # pragma: no cover
    from .catalog import PlatformCatalog

DECOMPOSITION_DEPTH_LIMIT = 4


@dataclass(frozen=True)
class PatternNode:
    name: str
    kind: str
    requires_udf: bool | None = None  # None: indifferent


@dataclass(frozen=True)
class PatternEdge:
    src: str
    dst: str


@dataclass(frozen=True)
class GraphPattern:
    nodes: tuple[PatternNode, ...]
    edges: tuple[PatternEdge, ...]

    def __post_init__(self):
        if not self.nodes:
            raise CatalogError("pattern must contain at least one node")
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise CatalogError("pattern node names must be unique")
        known = set(names)
        for e in self.edges:
            if e.src not in known or e.dst not in known:
                raise CatalogError(f"pattern edge {e.src}->{e.dst} references unknown node")
        if len(self.nodes) > 1:
            # Patterns must be connected (undirected) to be meaningful.
            adj: dict[str, set[str]] = {n: set() for n in known}
            for e in self.edges:
                adj[e.src].add(e.dst)
                adj[e.dst].add(e.src)
            seen = {self.nodes[0].name}
            frontier = [self.nodes[0].name]
            while frontier:
                cur = frontier.pop()
                for nxt in adj[cur]:
                    if nxt not in seen:
                        seen.add(nxt)
                        frontier.append(nxt)
            if seen != known:
                raise CatalogError("pattern graph must be connected")


def _node_matches(pnode: PatternNode, op: Operator) -> bool:
    if pnode.kind != op.kind.name:
        return False
    if pnode.requires_udf is True and op.kind.udf is None:
        return False
    if pnode.requires_udf is False and op.kind.udf is not None:
        return False
    return True


def match(pattern: GraphPattern, plan: DataflowPlan) -> list[dict[str, str]]:
    """All injective bindings of pattern nodes to plan operators such that
    every pattern edge is realized by some plan edge. Deterministic order."""
    op_pairs = {(e.src, e.dst) for e in plan.edges}

    ops = sorted(plan.operators)
    candidates: list[list[str]] = []
    for pnode in pattern.nodes:
        cands = [oid for oid in ops if _node_matches(pnode, plan.operators[oid])]
        if not cands:
            return []
        candidates.append(cands)

    results: list[dict[str, str]] = []

    def backtrack(i: int, binding: dict[str, str], used: set[str]):
        if i == len(pattern.nodes):
            results.append(dict(binding))
            return
        pnode = pattern.nodes[i]
        for oid in candidates[i]:
            if oid in used:
                continue
            binding[pnode.name] = oid
            ok = True
            for e in pattern.edges:
                if e.src in binding and e.dst in binding:
                    if (binding[e.src], binding[e.dst]) not in op_pairs:
                        ok = False
                        break
            if ok:
                used.add(oid)
                backtrack(i + 1, binding, used)
                used.discard(oid)
            del binding[pnode.name]

    backtrack(0, {}, set())
    results.sort(key=lambda b: tuple(b[n.name] for n in pattern.nodes))
    return results


@dataclass(frozen=True)
class SubstituteNode:
    """One node of a substitution: either a concrete execution operator or an
    abstract kind to be decomposed further. `udf` may be the literal string
    'inherit' to copy the matched operator's UDF tag."""

    name: str
    exec_op: str | None = None
    kind: str | None = None
    udf: str | None = "inherit"

    def __post_init__(self):
        if (self.exec_op is None) == (self.kind is None):
            raise CatalogError(
                f"substitute node '{self.name}': exactly one of operator/kind required"
            )


@dataclass(frozen=True)
class SubstituteEdge:
    src: str
    src_slot: int
    dst: str
    dst_slot: int


@dataclass(frozen=True)
class Substitution:
    nodes: tuple[SubstituteNode, ...]
    edges: tuple[SubstituteEdge, ...]
    inputs: tuple[tuple[str, int], ...]
    outputs: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class OperatorMapping:
    name: str
    pattern: GraphPattern
    substitution: Substitution


@dataclass(frozen=True)
class AltMember:
    local: str
    op: ExecutionOperator


@dataclass(frozen=True)
class Alternative:
    """One executable realization of an inflated operator: a small DAG of
    execution operators with routed external slots."""

    members: tuple[AltMember, ...]
    edges: tuple[tuple[str, int, str, int], ...]
    inputs: tuple[tuple[str, int], ...]
    outputs: tuple[tuple[str, int], ...]
    key: str
    platforms: frozenset[str]

    def member(self, local: str) -> AltMember:
        for m in self.members:
            if m.local == local:
                return m
        raise KeyError(local)

    def route_input(self, ext_slot: int) -> tuple[str, int]:
        """Side-input slots beyond the declared routing land on the entry
        member at the same slot index."""
        if ext_slot < len(self.inputs):
            return self.inputs[ext_slot]
        return (self.inputs[0][0], ext_slot)

    def route_output(self, ext_slot: int) -> tuple[str, int]:
        """Output slots beyond the declared routing land on the exit member at
        the same slot index (multi-output execution operators)."""
        if ext_slot < len(self.outputs):
            return self.outputs[ext_slot]
        return (self.outputs[0][0], ext_slot)

    def accepted(self, ext_slot: int) -> frozenset[str]:
        local, slot = self.route_input(ext_slot)
        return self.member(local).op.accepted(slot)

    def output_channel(self, ext_slot: int) -> str:
        local, _slot = self.route_output(ext_slot)
        channel = self.member(local).op.output_channel
        if channel is None:
            raise CatalogError(
                f"alternative member '{local}' has no output channel but is routed to an output"
            )
        return channel

    def member_order(self) -> list[str]:
        """Internal members in dependency order (ties by local name)."""
        locals_ = sorted(m.local for m in self.members)
        indeg = {l: 0 for l in locals_}
        adj: dict[str, list[str]] = {l: [] for l in locals_}
        for (src, _ss, dst, _ds) in self.edges:
            adj[src].append(dst)
            indeg[dst] += 1
        import heapq

        ready = [l for l in locals_ if indeg[l] == 0]
        heapq.heapify(ready)
        out = []
        while ready:
            cur = heapq.heappop(ready)
            out.append(cur)
            for nxt in sorted(adj[cur]):
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    heapq.heappush(ready, nxt)
        return out


@dataclass(frozen=True)
class InflatedOperator:
    original: Operator
    alternatives: tuple[Alternative, ...]


class InflatedPlan:
    """The original plan with, per operator, every executable alternative."""

    def __init__(self, plan: DataflowPlan, operators: dict[str, InflatedOperator]):
        self.plan = plan
        self.operators = operators

    def denoted_plan_count(self) -> int:
        count = 1
        for inflated in self.operators.values():
            count *= len(inflated.alternatives)
        return count


def _alt_key(members, edges, inputs, outputs) -> str:
    ms = ",".join(f"{m.local}={m.op.id}" for m in members)
    es = ",".join(f"{s}.{ss}>{d}.{ds}" for (s, ss, d, ds) in edges)
    ins = ",".join(f"{l}.{s}" for (l, s) in inputs)
    outs = ",".join(f"{l}.{s}" for (l, s) in outputs)
    return f"[{ms}][{es}][{ins}][{outs}]"


def _atomic_alternative(op: ExecutionOperator) -> Alternative:
    members = (AltMember("0", op),)
    outputs = (("0", 0),) if op.output_channel is not None else ()
    return Alternative(
        members=members,
        edges=(),
        inputs=(("0", 0),),
        outputs=outputs,
        key=_alt_key(members, (), (("0", 0),), outputs),
        platforms=frozenset((op.platform,)),
    )


def inflate(plan: DataflowPlan, catalog: "PlatformCatalog") -> InflatedPlan:
    """Replace every operator with an inflated operator carrying all
    executable alternatives reachable through the catalog's mappings.

    Only single-node patterns participate here (inflation is per-operator);
    multi-node patterns remain available through match(). The result is
    independent of mapping order: alternatives are deduplicated and sorted by
    their canonical key.
    """
    cache: dict[tuple[str, bool], tuple[Alternative, ...]] = {}
    inflated: dict[str, InflatedOperator] = {}
    for oid in sorted(plan.operators):
        op = plan.operators[oid]
        cache_key = (op.kind.name, op.kind.udf is not None)
        if cache_key not in cache:
            alts = _expand(op.kind.name, op.kind.udf, catalog, chain=())
            cache[cache_key] = tuple(alts)
        alternatives = cache[cache_key]
        if not alternatives:
            raise UncoverableOperatorError(op.kind.name, oid)
        inflated[oid] = InflatedOperator(original=op, alternatives=alternatives)
    return InflatedPlan(plan, inflated)


def _expand(
    kind: str, udf: str | None, catalog: "PlatformCatalog", chain: tuple[str, ...]
) -> list[Alternative]:
    probe = Operator(id="?", kind=OperatorKind(name=kind, arity_in=1, arity_out=1, udf=udf))
    out: dict[str, Alternative] = {}
    for mapping in catalog.single_node_mappings(kind):
        if not _node_matches(mapping.pattern.nodes[0], probe):
            continue
        new_chain = chain + (mapping.name,)
        if len(new_chain) > DECOMPOSITION_DEPTH_LIMIT:
            raise MappingDepthError(new_chain)
        for alt in _expand_substitution(mapping.substitution, udf, catalog, new_chain):
            out.setdefault(alt.key, alt)
    return [out[k] for k in sorted(out)]


def _expand_substitution(
    sub: Substitution, inherited_udf: str | None, catalog: "PlatformCatalog", chain
) -> list[Alternative]:
    member_choices: list[tuple[str, list[Alternative]]] = []
    for node in sub.nodes:
        if node.exec_op is not None:
            member_choices.append((node.name, [_atomic_alternative(catalog.operator(node.exec_op))]))
        else:
            udf = inherited_udf if node.udf == "inherit" else node.udf
            choices = _expand(node.kind, udf, catalog, chain)
            if not choices:
                return []
            member_choices.append((node.name, choices))

    results = []
    for combo in itertools.product(*(choices for _, choices in member_choices)):
        chosen = {name: alt for (name, _), alt in zip(member_choices, combo)}
        flat_members: list[AltMember] = []
        rename: dict[tuple[str, str], str] = {}
        for name, alt in sorted(chosen.items()):
            for m in alt.members:
                local = name if len(alt.members) == 1 else f"{name}.{m.local}"
                rename[(name, m.local)] = local
                flat_members.append(AltMember(local, m.op))
        flat_members.sort(key=lambda m: m.local)

        def resolve_out(node_name: str, slot: int) -> tuple[str, int]:
            alt = chosen[node_name]
            sublocal, subslot = alt.route_output(slot)
            return rename[(node_name, sublocal)], subslot

        def resolve_in(node_name: str, slot: int) -> tuple[str, int]:
            alt = chosen[node_name]
            sublocal, subslot = alt.route_input(slot)
            return rename[(node_name, sublocal)], subslot

        edges = []
        compatible = True
        for e in sub.edges:
            src_local, src_slot = resolve_out(e.src, e.src_slot)
            dst_local, dst_slot = resolve_in(e.dst, e.dst_slot)
            producer = next(m.op for m in flat_members if m.local == src_local)
            consumer = next(m.op for m in flat_members if m.local == dst_local)
            if producer.output_channel not in consumer.accepted(dst_slot):
                compatible = False
                break
            edges.append((src_local, src_slot, dst_local, dst_slot))
        # Inner sub-alternative edges come along unchanged (already compatible).
        for name, alt in sorted(chosen.items()):
            for (s, ss, d, ds) in alt.edges:
                edges.append((rename[(name, s)], ss, rename[(name, d)], ds))
        if not compatible:
            continue

        edges_t = tuple(sorted(edges))
        inputs = tuple(resolve_in(n, s) for (n, s) in sub.inputs)
        outputs = tuple(resolve_out(n, s) for (n, s) in sub.outputs)
        members_t = tuple(flat_members)
        results.append(
            Alternative(
                members=members_t,
                edges=edges_t,
                inputs=inputs,
                outputs=outputs,
                key=_alt_key(members_t, edges_t, inputs, outputs),
                platforms=frozenset(m.op.platform for m in members_t),
            )
        )
    return results
