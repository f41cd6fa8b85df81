"""Platform catalogs: everything the optimizer knows about execution backends.

A catalog file declares platforms (with cost profiles), channel types, channel
conversions (each priced through a regular execution operator), execution
operators, cost functions, and operator mappings. Files can pull in other
files through "include"; a file is included at most once and list sections
concatenate in include order.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

from .ccg import Channel, ChannelConversionGraph, ConversionEdge
from .cost import (
    CostModel,
    IntervalEstimate,
    PlatformCostProfile,
    RESOURCES,
    ResourceCostFunction,
)
from .errors import CatalogError
from .mappings import (
    GraphPattern,
    OperatorMapping,
    PatternEdge,
    PatternNode,
    SubstituteEdge,
    SubstituteNode,
    Substitution,
)
from .plan import KIND_SHAPES, ExecutionOperator


class PlatformCatalog:
    def __init__(
        self,
        profiles: dict[str, PlatformCostProfile],
        channels: dict[str, Channel],
        conversions: list[ConversionEdge],
        operators: dict[str, ExecutionOperator],
        functions: dict[str, dict[str, ResourceCostFunction]],
        mappings: tuple[OperatorMapping, ...],
    ):
        self.profiles = profiles
        self.channels = channels
        self.conversions = conversions
        self.operators = operators
        self.functions = functions
        self.mappings = mappings
        self._model = CostModel(profiles, functions)

        def price(edge: ConversionEdge, cardinality: IntervalEstimate) -> IntervalEstimate:
            return self._model.cost(self.operators[edge.operator], cardinality)

        self._graph = ChannelConversionGraph(channels.values(), conversions, cost_fn=price)
        self._single_node: dict[str, list[OperatorMapping]] = {}
        for m in mappings:
            if len(m.pattern.nodes) == 1:
                self._single_node.setdefault(m.pattern.nodes[0].kind, []).append(m)

    def model(self) -> CostModel:
        return self._model

    def graph(self) -> ChannelConversionGraph:
        return self._graph

    def operator(self, op_id: str) -> ExecutionOperator:
        try:
            return self.operators[op_id]
        except KeyError:
            raise CatalogError(f"unknown execution operator '{op_id}'") from None

    def single_node_mappings(self, kind: str) -> list[OperatorMapping]:
        return self._single_node.get(kind, [])

    def conversion_operator(self, src: str, dst: str) -> ExecutionOperator:
        edge = self._graph.edges[(src, dst)]
        return self.operators[edge.operator]

    def edge_platforms(self) -> dict[tuple[str, str], str]:
        return {
            pair: self.operators[edge.operator].platform
            for pair, edge in self._graph.edges.items()
        }


def load_catalog(path: str | Path) -> PlatformCatalog:
    doc = _read_merged(Path(path), visited=set())
    return build_catalog(doc, origin=str(path))


def load_catalog_fragments(paths) -> PlatformCatalog:
    """One catalog from several fragment files (operators/CCG/profiles splits).

    Include tracking is shared across the fragments, so a file both passed
    directly and pulled in by another fragment's include merges only once.
    """
    visited: set[Path] = set()
    merged: dict = {}
    for p in paths:
        doc = _read_merged(Path(p), visited)
        _merge_section(merged, doc, str(p))
    return build_catalog(merged, origin=", ".join(str(p) for p in paths))


def _read_merged(path: Path, visited: set[Path]) -> dict:
    resolved = path.resolve()
    if resolved in visited:
        return {}
    visited.add(resolved)
    try:
        text = path.read_text()
    except OSError as err:
        raise CatalogError(f"cannot read catalog file '{path}': {err}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise CatalogError(f"{path}: not valid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise CatalogError(f"{path}: top level must be an object")

    merged: dict = {}
    includes = doc.get("include", [])
    if not isinstance(includes, list):
        raise CatalogError(f"{path}: include: must be an array of paths")
    for inc in includes:
        sub = _read_merged(path.parent / str(inc), visited)
        _merge_section(merged, sub, str(path))
    _merge_section(merged, doc, str(path))
    return merged


_LIST_SECTIONS = ("platforms", "channels", "conversions", "operators", "mappings")


def _merge_section(into: dict, doc: dict, origin: str) -> None:
    for section in _LIST_SECTIONS:
        if section in doc:
            if not isinstance(doc[section], list):
                raise CatalogError(f"{origin}: {section}: must be an array")
            into.setdefault(section, []).extend(doc[section])
    if "costFunctions" in doc:
        if not isinstance(doc["costFunctions"], dict):
            raise CatalogError(f"{origin}: costFunctions: must be an object")
        table = into.setdefault("costFunctions", {})
        for ref, body in doc["costFunctions"].items():
            if ref in table:
                raise CatalogError(f"{origin}: costFunctions: duplicate definition '{ref}'")
            table[ref] = body


def build_catalog(doc: Mapping, origin: str = "<catalog>") -> PlatformCatalog:
    def fail(where: str, message: str):
        raise CatalogError(f"{origin}: {where}: {message}")

    profiles: dict[str, PlatformCostProfile] = {}
    for i, entry in enumerate(doc.get("platforms", [])):
        where = f"platforms[{i}]"
        pid = _require_str(entry, "id", where, fail)
        if pid in profiles:
            fail(where, f"duplicate platform '{pid}'")
        units = entry.get("unitCosts", {})
        if not isinstance(units, dict):
            fail(f"{where}.unitCosts", "must be an object")
        for resource in units:
            if resource not in RESOURCES:
                fail(
                    f"{where}.unitCosts",
                    f"unknown resource '{resource}' (known: {', '.join(RESOURCES)})",
                )
        profiles[pid] = PlatformCostProfile(
            platform=pid,
            unit_costs={k: float(v) for k, v in units.items()},
            startup_cost=float(entry.get("startupCost", 0.0)),
            hardware={k: float(v) for k, v in entry.get("hardware", {}).items()},
        )
    if not profiles:
        fail("platforms", "at least one platform is required")

    channels: dict[str, Channel] = {}
    for i, entry in enumerate(doc.get("channels", [])):
        where = f"channels[{i}]"
        cid = _require_str(entry, "id", where, fail)
        if cid in channels:
            fail(where, f"duplicate channel '{cid}'")
        channels[cid] = Channel(id=cid, reusable=bool(entry.get("reusable", False)))

    functions: dict[str, dict[str, ResourceCostFunction]] = {}
    for ref, body in doc.get("costFunctions", {}).items():
        where = f"costFunctions.{ref}"
        if not isinstance(body, dict) or not body:
            fail(where, "must map resources to alpha/beta pairs")
        per_resource = {}
        for resource, ab in body.items():
            if resource not in RESOURCES:
                fail(where, f"unknown resource '{resource}' (known: {', '.join(RESOURCES)})")
            per_resource[resource] = ResourceCostFunction(
                alpha=float(ab.get("alpha", 0.0)), beta=float(ab.get("beta", 0.0))
            )
        functions[ref] = per_resource

    operators: dict[str, ExecutionOperator] = {}
    for i, entry in enumerate(doc.get("operators", [])):
        where = f"operators[{i}]"
        oid = _require_str(entry, "id", where, fail)
        if oid in operators:
            fail(where, f"duplicate operator '{oid}'")
        platform = _require_str(entry, "platform", where, fail)
        if platform not in profiles:
            fail(f"{where}.platform", f"unknown platform '{platform}'")
        implements = entry.get("implements")
        if implements is not None and implements not in KIND_SHAPES:
            fail(f"{where}.implements", f"unknown operator kind '{implements}'")
        inputs = entry.get("inputs", [])
        for ch in inputs:
            if ch not in channels:
                fail(f"{where}.inputs", f"unknown channel '{ch}'")
        output = entry.get("output")
        if output is not None and output not in channels:
            fail(f"{where}.output", f"unknown channel '{output}'")
        ref = _require_str(entry, "cost", where, fail)
        if ref not in functions:
            fail(f"{where}.cost", f"unknown cost function '{ref}'")
        per_slot = []
        for slot_key, slot_channels in entry.get("slotInputs", {}).items():
            for ch in slot_channels:
                if ch not in channels:
                    fail(f"{where}.slotInputs.{slot_key}", f"unknown channel '{ch}'")
            per_slot.append((int(slot_key), frozenset(slot_channels)))
        operators[oid] = ExecutionOperator(
            id=oid,
            platform=platform,
            implements=implements or "",
            input_channels=frozenset(inputs),
            output_channel=output,
            cost_function_ref=ref,
            per_slot_channels=tuple(sorted(per_slot)),
        )

    conversions: list[ConversionEdge] = []
    for i, entry in enumerate(doc.get("conversions", [])):
        where = f"conversions[{i}]"
        src = _require_str(entry, "from", where, fail)
        dst = _require_str(entry, "to", where, fail)
        for ch in (src, dst):
            if ch not in channels:
                fail(where, f"unknown channel '{ch}'")
        if src == dst:
            fail(where, "conversion cannot map a channel to itself")
        op_ref = _require_str(entry, "operator", where, fail)
        if op_ref not in operators:
            fail(f"{where}.operator", f"unknown execution operator '{op_ref}'")
        conversions.append(ConversionEdge(src=src, dst=dst, operator=op_ref))

    mappings = tuple(
        _parse_mapping(entry, i, operators, fail) for i, entry in enumerate(doc.get("mappings", []))
    )
    names = [m.name for m in mappings]
    for name in names:
        if names.count(name) > 1:
            fail("mappings", f"duplicate mapping name '{name}'")

    return PlatformCatalog(profiles, channels, conversions, operators, functions, mappings)


def _require_str(entry, key: str, where: str, fail) -> str:
    if not isinstance(entry, dict) or key not in entry:
        fail(where, f"missing required field '{key}'")
    return str(entry[key])


def _parse_mapping(entry, i: int, operators, fail) -> OperatorMapping:
    where = f"mappings[{i}]"
    name = _require_str(entry, "name", where, fail)

    pat = entry.get("pattern")
    if not isinstance(pat, dict):
        fail(where, "missing pattern object")
    pnodes = []
    for j, n in enumerate(pat.get("nodes", [])):
        kind = _require_str(n, "kind", f"{where}.pattern.nodes[{j}]", fail)
        if kind not in KIND_SHAPES:
            fail(f"{where}.pattern.nodes[{j}].kind", f"unknown operator kind '{kind}'")
        pnodes.append(
            PatternNode(
                name=_require_str(n, "name", f"{where}.pattern.nodes[{j}]", fail),
                kind=kind,
                requires_udf=n.get("requiresUdf"),
            )
        )
    pedges = [
        PatternEdge(
            src=_require_str(e, "from", f"{where}.pattern.edges[{j}]", fail),
            dst=_require_str(e, "to", f"{where}.pattern.edges[{j}]", fail),
        )
        for j, e in enumerate(pat.get("edges", []))
    ]
    try:
        pattern = GraphPattern(nodes=tuple(pnodes), edges=tuple(pedges))
    except CatalogError as err:
        fail(f"{where}.pattern", str(err))

    sub = entry.get("substitute")
    if not isinstance(sub, dict):
        fail(where, "missing substitute object")
    snodes = []
    local_names = set()
    for j, n in enumerate(sub.get("nodes", [])):
        swhere = f"{where}.substitute.nodes[{j}]"
        sname = _require_str(n, "name", swhere, fail)
        if sname in local_names:
            fail(swhere, f"duplicate substitute node name '{sname}'")
        local_names.add(sname)
        exec_op = n.get("operator")
        kind = n.get("kind")
        if exec_op is not None and exec_op not in operators:
            fail(f"{swhere}.operator", f"unknown execution operator '{exec_op}'")
        if kind is not None and kind not in KIND_SHAPES:
            fail(f"{swhere}.kind", f"unknown operator kind '{kind}'")
        try:
            snodes.append(
                SubstituteNode(
                    name=sname, exec_op=exec_op, kind=kind, udf=n.get("udf", "inherit")
                )
            )
        except CatalogError as err:
            fail(swhere, str(err))
    sedges = []
    for j, e in enumerate(sub.get("edges", [])):
        swhere = f"{where}.substitute.edges[{j}]"
        src = _require_str(e, "from", swhere, fail)
        dst = _require_str(e, "to", swhere, fail)
        for end in (src, dst):
            if end not in local_names:
                fail(swhere, f"unknown substitute node '{end}'")
        sedges.append(
            SubstituteEdge(
                src=src,
                src_slot=int(e.get("fromSlot", 0)),
                dst=dst,
                dst_slot=int(e.get("toSlot", 0)),
            )
        )

    def parse_ports(key: str) -> tuple[tuple[str, int], ...]:
        ports = []
        for j, port in enumerate(sub.get(key, [])):
            swhere = f"{where}.substitute.{key}[{j}]"
            if not isinstance(port, list) or len(port) != 2:
                fail(swhere, "must be a [node, slot] pair")
            node, slot = str(port[0]), int(port[1])
            if node not in local_names:
                fail(swhere, f"unknown substitute node '{node}'")
            ports.append((node, slot))
        return tuple(ports)

    inputs = parse_ports("inputs")
    outputs = parse_ports("outputs")

    if len(pattern.nodes) == 1:
        base_in, _variadic, arity_out = KIND_SHAPES[pattern.nodes[0].kind]
        if len(inputs) != base_in:
            fail(
                f"{where}.substitute.inputs",
                f"kind {pattern.nodes[0].kind} needs {base_in} routed input(s), got {len(inputs)}",
            )
        if len(outputs) != arity_out:
            fail(
                f"{where}.substitute.outputs",
                f"kind {pattern.nodes[0].kind} needs {arity_out} routed output(s), got {len(outputs)}",
            )

    return OperatorMapping(
        name=name,
        pattern=pattern,
        substitution=Substitution(
            nodes=tuple(snodes), edges=tuple(sedges), inputs=inputs, outputs=outputs
        ),
    )


def load_source_stats(path: str | Path) -> dict:
    """Source cardinality statistics: op id -> interval spec (dict or number)."""
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise CatalogError(f"cannot read stats file '{path}': {err}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise CatalogError(f"{path}: not valid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise CatalogError(f"{path}: top level must be an object mapping operator ids to stats")
    return doc
