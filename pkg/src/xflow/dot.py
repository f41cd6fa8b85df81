"""Deterministic DOT renderings for plans, inflated plans, trees, and
execution plans. Nodes and edges are emitted in sorted order so the same
input always yields byte-identical text."""

from __future__ import annotations

from .ccg import ConversionTree
from .mappings import InflatedPlan
from .plan import DataflowPlan, ExecutionPlan


def _q(text: str) -> str:
    # DOT quoted string: only double quotes need escaping; backslashes stay
    # meaningful so labels can carry \n line breaks.
    return '"' + str(text).replace('"', '\\"') + '"'


def _slot_label(src_slot: int, dst_slot: int) -> str:
    if src_slot == 0 and dst_slot == 0:
        return ""
    return f" [label={_q(f'{src_slot}:{dst_slot}')}]"


def plan_dot(plan: DataflowPlan) -> str:
    lines = [
        "digraph dataflow {",
        "  rankdir=LR;",
        "  node [shape=box];",
    ]
    for oid in sorted(plan.operators):
        op = plan.operators[oid]
        label = f"{oid}\\n{op.kind.name}"
        lines.append(f"  {_q(oid)} [label={_q(label)}];")
    for e in plan.edges:
        attrs = _slot_label(e.src_slot, e.dst_slot)
        if e.feedback:
            attrs = attrs[:-1] + ", style=dashed]" if attrs else " [style=dashed]"
        lines.append(f"  {_q(e.src)} -> {_q(e.dst)}{attrs};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def inflated_plan_dot(inflated: InflatedPlan) -> str:
    lines = [
        "digraph inflated {",
        "  rankdir=LR;",
        "  node [shape=box];",
    ]
    for oid in sorted(inflated.operators):
        node = inflated.operators[oid]
        n = len(node.alternatives)
        noun = "alternative" if n == 1 else "alternatives"
        label = f"{oid}\\n{node.original.kind.name}\\n{n} {noun}"
        lines.append(f"  {_q(oid)} [label={_q(label)}];")
    for e in inflated.plan.edges:
        attrs = _slot_label(e.src_slot, e.dst_slot)
        if e.feedback:
            attrs = attrs[:-1] + ", style=dashed]" if attrs else " [style=dashed]"
        lines.append(f"  {_q(e.src)} -> {_q(e.dst)}{attrs};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def conversion_tree_dot(tree: ConversionTree) -> str:
    lines = [
        "digraph conversion_tree {",
        "  rankdir=LR;",
        "  node [shape=ellipse];",
    ]
    for ch in sorted(tree.channels()):
        if ch == tree.root:
            lines.append(f"  {_q(ch)} [penwidth=2];")
        else:
            lines.append(f"  {_q(ch)};")
    for (src, dst) in sorted(tree.edges):
        lines.append(f"  {_q(src)} -> {_q(dst)};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def execution_plan_dot(plan: ExecutionPlan) -> str:
    """Execution plans distinguish data movement: conversion operators render
    as dashed ellipses, regular operators as boxes labeled with platform."""
    lines = [
        "digraph execution {",
        "  rankdir=LR;",
    ]
    for nid in sorted(plan.nodes):
        node = plan.nodes[nid]
        label = f"{nid}\\n{node.op.id} @ {node.op.platform}"
        if node.conversion:
            lines.append(
                f"  {_q(nid)} [label={_q(label)}, shape=ellipse, style=dashed];"
            )
        else:
            lines.append(f"  {_q(nid)} [label={_q(label)}, shape=box];")
    for e in plan.edges:
        style = ", style=dashed" if e.feedback else ""
        lines.append(f"  {_q(e.src)} -> {_q(e.dst)} [label={_q(e.channel)}{style}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
