"""Platform-agnostic dataflow plans and the execution plans derived from them.

A dataflow plan is a DAG of abstract operators wired slot-to-slot. Loops are a
single RepeatLoop head operator: slot in0 takes the initial loop input, in1 the
feedback edge, out0 feeds the loop body once per iteration, out1 carries the
final result. Feedback edges are the only permitted back edges and are ignored
by reachability, cycle and topological checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping

from .errors import PlanSchemaError

# kind name -> (base input arity, extra side inputs allowed, output arity).
# Side inputs (slots beyond the base arity) carry broadcast-style auxiliary
# data; estimators only ever read slot 0 (and slot 1 for Join).
KIND_SHAPES: dict[str, tuple[int, bool, int]] = {
    "TextFileSource": (0, False, 1),
    "CollectionSource": (0, False, 1),
    "Map": (1, True, 1),
    "Filter": (1, True, 1),
    "FlatMap": (1, True, 1),
    "ReduceBy": (1, True, 1),
    "GroupBy": (1, True, 1),
    "Reduce": (1, False, 1),
    "Join": (2, False, 1),
    "Union": (2, False, 1),
    "Cartesian": (2, False, 1),
    "Distinct": (1, False, 1),
    "Sort": (1, False, 1),
    "Count": (1, False, 1),
    "Sample": (1, False, 1),
    "CollectionSink": (1, False, 0),
    "TextFileSink": (1, False, 0),
    "RepeatLoop": (2, False, 2),
}

SOURCE_KINDS = frozenset(k for k, (n, _, _) in KIND_SHAPES.items() if n == 0)
SINK_KINDS = frozenset(k for k, (_, _, n) in KIND_SHAPES.items() if n == 0)
LOOP_KINDS = frozenset({"RepeatLoop"})

LOOP_INITIAL_SLOT = 0
LOOP_FEEDBACK_SLOT = 1
LOOP_BODY_SLOT = 0
LOOP_FINAL_SLOT = 1


@dataclass(frozen=True)
class OperatorKind:
    """Shape and annotations of one abstract operator instance.

    `udf` is an opaque tag; `selectivity` is an optional hint consumed by the
    cardinality estimator; `iterations` is meaningful on loop heads only.
    """

    name: str
    arity_in: int
    arity_out: int
    udf: str | None = None
    selectivity: float | None = None
    iterations: int | None = None


@dataclass(frozen=True)
class Operator:
    id: str
    kind: OperatorKind

    @property
    def kind_name(self) -> str:
        return self.kind.name


@dataclass(frozen=True)
class Edge:
    src: str
    src_slot: int
    dst: str
    dst_slot: int
    feedback: bool = False

    def key(self) -> tuple:
        return (self.src, self.src_slot, self.dst, self.dst_slot, self.feedback)


class DataflowPlan:
    """Immutable-by-convention container for operators and slot-wired edges."""

    def __init__(self, operators: Iterable[Operator], edges: Iterable[Edge]):
        self.operators: dict[str, Operator] = {}
        for op in operators:
            if op.id in self.operators:
                raise PlanSchemaError(f"operators: duplicate operator id '{op.id}'")
            self.operators[op.id] = op
        self.edges: tuple[Edge, ...] = tuple(sorted(edges, key=Edge.key))
        self._in: dict[str, list[Edge]] = {oid: [] for oid in self.operators}
        self._out: dict[str, list[Edge]] = {oid: [] for oid in self.operators}
        for e in self.edges:
            if e.src in self._out:
                self._out[e.src].append(e)
            if e.dst in self._in:
                self._in[e.dst].append(e)

    def __len__(self) -> int:
        return len(self.operators)

    def op(self, op_id: str) -> Operator:
        return self.operators[op_id]

    def in_edges(self, op_id: str) -> list[Edge]:
        return self._in[op_id]

    def out_edges(self, op_id: str) -> list[Edge]:
        return self._out[op_id]

    def consumers(self, op_id: str, slot: int) -> list[Edge]:
        return [e for e in self._out[op_id] if e.src_slot == slot]

    def sources(self) -> list[str]:
        return sorted(o.id for o in self.operators.values() if o.kind.arity_in == 0)

    def sinks(self) -> list[str]:
        return sorted(o.id for o in self.operators.values() if o.kind.arity_out == 0)

    def output_slots(self) -> list[tuple[str, int]]:
        """Every (operator, output slot) pair, wired or not, in canonical order."""
        slots = []
        for oid in sorted(self.operators):
            for s in range(self.operators[oid].kind.arity_out):
                slots.append((oid, s))
        return slots


def build_plan(op_specs: Iterable[Mapping], edge_specs: Iterable[Mapping]) -> DataflowPlan:
    """Construct a plan from dict specs, deriving side-input arity from wiring.

    Raises PlanSchemaError for structural schema problems (unknown kinds,
    unknown endpoints, missing sink); semantic slot problems are left to
    validate_plan so they can be reported together.
    """
    edges = []
    max_in_slot: dict[str, int] = {}
    for i, e in enumerate(edge_specs):
        try:
            edge = Edge(
                src=str(e["from"]),
                src_slot=int(e.get("fromSlot", 0)),
                dst=str(e["to"]),
                dst_slot=int(e.get("toSlot", 0)),
                feedback=bool(e.get("feedback", False)),
            )
        except KeyError as missing:
            raise PlanSchemaError(f"edges[{i}]: missing field {missing}") from None
        edges.append(edge)
        max_in_slot[edge.dst] = max(max_in_slot.get(edge.dst, -1), edge.dst_slot)

    operators = []
    for i, spec in enumerate(op_specs):
        if "id" not in spec or "kind" not in spec:
            raise PlanSchemaError(f"operators[{i}]: 'id' and 'kind' are required")
        op_id = str(spec["id"])
        kind_name = str(spec["kind"])
        if kind_name not in KIND_SHAPES:
            known = ", ".join(sorted(KIND_SHAPES))
            raise PlanSchemaError(
                f"operators[{i}].kind: unknown operator kind '{kind_name}' (known: {known})"
            )
        base_in, variadic, arity_out = KIND_SHAPES[kind_name]
        arity_in = base_in
        if variadic:
            arity_in = max(base_in, max_in_slot.get(op_id, -1) + 1)
        selectivity = spec.get("selectivity")
        if selectivity is not None:
            selectivity = float(selectivity)
        iterations = spec.get("iterations")
        if iterations is not None:
            iterations = int(iterations)
        kind = OperatorKind(
            name=kind_name,
            arity_in=arity_in,
            arity_out=arity_out,
            udf=spec.get("udf"),
            selectivity=selectivity,
            iterations=iterations,
        )
        operators.append(Operator(id=op_id, kind=kind))

    ids = {op.id for op in operators}
    for i, e in enumerate(edges):
        for end, name in ((e.src, "from"), (e.dst, "to")):
            if end not in ids:
                raise PlanSchemaError(f"edges[{i}].{name}: unknown operator '{end}'")
    if not any(op.kind.arity_out == 0 for op in operators):
        raise PlanSchemaError("plan must contain a sink")
    return DataflowPlan(operators, edges)


def parse_plan(text: str) -> DataflowPlan:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise PlanSchemaError(f"not valid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise PlanSchemaError("top level must be an object")
    for key in ("operators", "edges"):
        if key not in doc:
            raise PlanSchemaError(f"missing top-level key '{key}'")
        if not isinstance(doc[key], list):
            raise PlanSchemaError(f"{key}: must be an array")
    return build_plan(doc["operators"], doc["edges"])


def plan_to_dict(plan: DataflowPlan) -> dict:
    ops = []
    for oid in sorted(plan.operators):
        op = plan.operators[oid]
        entry: dict = {"id": op.id, "kind": op.kind.name}
        if op.kind.udf is not None:
            entry["udf"] = op.kind.udf
        if op.kind.selectivity is not None:
            entry["selectivity"] = op.kind.selectivity
        if op.kind.iterations is not None:
            entry["iterations"] = op.kind.iterations
        ops.append(entry)
    edges = []
    for e in plan.edges:
        entry = {"from": e.src, "fromSlot": e.src_slot, "to": e.dst, "toSlot": e.dst_slot}
        if e.feedback:
            entry["feedback"] = True
        edges.append(entry)
    return {"operators": ops, "edges": edges}


def serialize_plan(plan: DataflowPlan) -> str:
    """Canonical text form: sorted operators and edges, stable indentation."""
    return json.dumps(plan_to_dict(plan), indent=2) + "\n"


def validate_plan(plan: DataflowPlan) -> list[str]:
    """Structural invariant check; returns human-readable violations, [] if clean."""
    violations: list[str] = []
    for oid in sorted(plan.operators):
        op = plan.operators[oid]
        kind = op.kind
        slot_fill: dict[int, int] = {}
        for e in plan.in_edges(oid):
            slot_fill[e.dst_slot] = slot_fill.get(e.dst_slot, 0) + 1
        if kind.arity_in == 0 and slot_fill:
            violations.append(f"{oid}: source of kind {kind.name} must not have inputs")
        for slot in range(kind.arity_in):
            n = slot_fill.pop(slot, 0)
            if n == 0:
                violations.append(f"{oid}: input slot {slot} has no incoming edge")
            elif n > 1:
                violations.append(f"{oid}: input slot {slot} has {n} incoming edges")
        for slot in sorted(slot_fill):
            violations.append(
                f"{oid}: input slot {slot} out of range (arity_in={kind.arity_in})"
            )
        for e in plan.out_edges(oid):
            if e.src_slot >= kind.arity_out or e.src_slot < 0:
                violations.append(
                    f"{oid}: output slot {e.src_slot} out of range (arity_out={kind.arity_out})"
                )
        if kind.selectivity is not None and kind.selectivity < 0:
            violations.append(f"{oid}: selectivity must be nonnegative")
        if kind.iterations is not None:
            if kind.iterations < 0:
                violations.append(f"{oid}: iterations must be nonnegative")
            if kind.name not in LOOP_KINDS:
                violations.append(f"{oid}: iterations annotation on non-loop kind {kind.name}")

    for e in plan.edges:
        if e.feedback and plan.operators[e.dst].kind.name not in LOOP_KINDS:
            violations.append(
                f"edge {e.src}->{e.dst}: feedback edge into non-loop operator"
            )

    # Cycle check over forward (non-feedback) edges.
    order, acyclic = _kahn(sorted(plan.operators), _forward_adjacency(plan))
    if not acyclic:
        in_order = set(order)
        stuck = sorted(set(plan.operators) - in_order)
        violations.append("cycle through operators outside feedback edges: " + ", ".join(stuck))

    reachable: set[str] = set()
    frontier = [oid for oid in plan.operators if plan.operators[oid].kind.arity_in == 0]
    reachable.update(frontier)
    while frontier:
        nxt = []
        for oid in frontier:
            for e in plan.out_edges(oid):
                if not e.feedback and e.dst not in reachable:
                    reachable.add(e.dst)
                    nxt.append(e.dst)
        frontier = nxt
    for oid in sorted(set(plan.operators) - reachable):
        violations.append(f"{oid}: unreachable from any source")

    return violations


def _forward_adjacency(plan: DataflowPlan) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {oid: set() for oid in plan.operators}
    for e in plan.edges:
        if not e.feedback:
            adj[e.src].add(e.dst)
    return adj


def _kahn(nodes: list[str], adj: dict[str, set[str]]) -> tuple[list[str], bool]:
    import heapq

    indeg = {n: 0 for n in nodes}
    for n, outs in adj.items():
        for m in outs:
            if m in indeg:
                indeg[m] += 1
    ready = [n for n in nodes if indeg[n] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for m in sorted(adj.get(n, ())):
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(ready, m)
    return order, len(order) == len(nodes)


def loop_bodies(plan: DataflowPlan) -> dict[str, frozenset[str]]:
    """Map each loop head to its body: operators fed (transitively) by the
    head's per-iteration output that also reach a feedback source of the head."""
    bodies: dict[str, frozenset[str]] = {}
    for oid in sorted(plan.operators):
        if plan.operators[oid].kind.name not in LOOP_KINDS:
            continue
        fed: set[str] = set()
        frontier = [e.dst for e in plan.consumers(oid, LOOP_BODY_SLOT) if not e.feedback]
        while frontier:
            cur = frontier.pop()
            if cur in fed or cur == oid:
                continue
            fed.add(cur)
            for e in plan.out_edges(cur):
                if not e.feedback:
                    frontier.append(e.dst)
        feedback_sources = {
            e.src for e in plan.in_edges(oid) if e.feedback
        }
        # Walk backwards from feedback sources through forward edges.
        reaches: set[str] = set()
        frontier = [s for s in feedback_sources if s in fed]
        while frontier:
            cur = frontier.pop()
            if cur in reaches:
                continue
            reaches.add(cur)
            for e in plan.in_edges(cur):
                if not e.feedback and e.src in fed and e.src not in reaches:
                    frontier.append(e.src)
        bodies[oid] = frozenset(reaches)
    return bodies


def multiplicities(plan: DataflowPlan) -> dict[str, float]:
    """Cost multiplicity per operator: product of iteration estimates of every
    loop whose body contains it. Loop heads count in their enclosing scope."""
    mult = {oid: 1.0 for oid in plan.operators}
    for head, body in loop_bodies(plan).items():
        iters = plan.operators[head].kind.iterations
        factor = float(iters if iters is not None else 1)
        for oid in body:
            mult[oid] *= factor
    return mult


def topo_order(plan: DataflowPlan) -> list[str]:
    """Topological order over forward edges, ties broken lexicographically by
    operator id, with each loop body placed contiguously after its head."""
    bodies = loop_bodies(plan)
    order = _clustered_order(set(plan.operators), plan, bodies)
    if len(order) != len(plan.operators):
        raise PlanSchemaError("plan has a cycle outside feedback edges")
    return order


def _clustered_order(members: set[str], plan: DataflowPlan, bodies) -> list[str]:
    # Top-level clusters within `members`: loop heads whose body is not nested
    # inside another member head's body.
    heads = [h for h in bodies if h in members]
    nested: set[str] = set()
    for h in heads:
        for other in heads:
            if other != h and h in bodies[other]:
                nested.add(h)
    top_heads = [h for h in heads if h not in nested]
    rep: dict[str, str] = {}
    for h in top_heads:
        rep[h] = h
        for oid in bodies[h]:
            if oid in members:
                rep[oid] = h
    for oid in members:
        rep.setdefault(oid, oid)

    cluster_members: dict[str, set[str]] = {}
    for oid, r in rep.items():
        cluster_members.setdefault(r, set()).add(oid)

    adj: dict[str, set[str]] = {r: set() for r in cluster_members}
    for e in plan.edges:
        if e.feedback or e.src not in rep or e.dst not in rep:
            continue
        a, b = rep[e.src], rep[e.dst]
        if a != b:
            adj[a].add(b)
    cluster_order, _ = _kahn(sorted(cluster_members), adj)

    out: list[str] = []
    for r in cluster_order:
        group = cluster_members[r]
        if len(group) == 1:
            out.append(r)
        else:
            out.append(r)
            out.extend(_clustered_order(group - {r}, plan, bodies))
    return out


# --- execution side -------------------------------------------------------

ACCEPT_ALL_SLOTS = -1


@dataclass(frozen=True)
class ExecutionOperator:
    """A platform-bound operator as described by a catalog.

    `input_channels` applies to every input slot unless `per_slot_channels`
    overrides a specific slot. Multi-output operators emit `output_channel`
    on every output slot.
    """

    id: str
    platform: str
    implements: str
    input_channels: frozenset[str]
    output_channel: str | None
    cost_function_ref: str
    per_slot_channels: tuple[tuple[int, frozenset[str]], ...] = ()

    def accepted(self, slot: int) -> frozenset[str]:
        for s, channels in self.per_slot_channels:
            if s == slot:
                return channels
        return self.input_channels


@dataclass(frozen=True)
class ExecNode:
    """One node of an execution plan; `implements` names the abstract
    operator(s) this node realizes, empty for data-movement operators."""

    id: str
    op: ExecutionOperator
    implements: tuple[str, ...] = ()
    conversion: bool = False


@dataclass(frozen=True)
class ExecEdge:
    src: str
    src_slot: int
    dst: str
    dst_slot: int
    channel: str
    feedback: bool = False

    def key(self) -> tuple:
        return (self.src, self.src_slot, self.dst, self.dst_slot, self.channel, self.feedback)


class ExecutionPlan:
    def __init__(self, nodes: Iterable[ExecNode], edges: Iterable[ExecEdge]):
        self.nodes: dict[str, ExecNode] = {}
        for n in nodes:
            if n.id in self.nodes:
                raise PlanSchemaError(f"execution plan: duplicate node id '{n.id}'")
            self.nodes[n.id] = n
        self.edges: tuple[ExecEdge, ...] = tuple(sorted(edges, key=ExecEdge.key))

    def platforms(self) -> set[str]:
        return {n.op.platform for n in self.nodes.values()}

    def node_for(self, plan_op_id: str) -> list[ExecNode]:
        return [n for n in self.nodes.values() if plan_op_id in n.implements]

    def serialize(self) -> str:
        doc = {
            "nodes": [
                {
                    "id": n.id,
                    "operator": n.op.id,
                    "platform": n.op.platform,
                    "implements": list(n.implements),
                    "conversion": n.conversion,
                }
                for _, n in sorted(self.nodes.items())
            ],
            "edges": [
                {
                    "from": e.src,
                    "fromSlot": e.src_slot,
                    "to": e.dst,
                    "toSlot": e.dst_slot,
                    "channel": e.channel,
                    **({"feedback": True} if e.feedback else {}),
                }
                for e in self.edges
            ],
        }
        return json.dumps(doc, indent=2) + "\n"


def validate_execution_plan(plan: ExecutionPlan) -> list[str]:
    """Channel compatibility along every edge; used by tests and --explain."""
    violations = []
    for e in plan.edges:
        src = plan.nodes.get(e.src)
        dst = plan.nodes.get(e.dst)
        if src is None or dst is None:
            violations.append(f"edge {e.src}->{e.dst}: unknown endpoint")
            continue
        if src.op.output_channel is not None and e.channel != src.op.output_channel:
            violations.append(
                f"edge {e.src}->{e.dst}: channel {e.channel} != producer output "
                f"{src.op.output_channel}"
            )
        if e.channel not in dst.op.accepted(e.dst_slot):
            violations.append(
                f"edge {e.src}->{e.dst}: consumer {dst.op.id} does not accept {e.channel} "
                f"on slot {e.dst_slot}"
            )
    return violations
