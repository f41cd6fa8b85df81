"""Command-line front end.

Subcommands: validate, inflate, mct, optimize, learn, simulate, bench.
Results go to stdout; timings and progress go to stderr so output stays
bit-reproducible under fixed seeds. Exit codes: 0 success, 1 bad input or
usage, 2 infeasible instance (no conversion tree / no executable plan).
"""

from __future__ import annotations

import argparse
import json
import random
import sys
import time
from pathlib import Path

from . import __version__
from .bench import DEFAULT_PAIR_BUDGET, render_csv, run_bench
from .catalog import load_catalog_fragments, load_source_stats
from .ccg import find_mct
from .cost import IntervalEstimate, LogRecord, TemplateResource, learn
from .dot import (
    conversion_tree_dot,
    execution_plan_dot,
    inflated_plan_dot,
)
from .enumeration import PruneRule, annotate, enumerate_plans
from .errors import InfeasibleError, InputError, XflowError
from .mappings import inflate
from .plan import parse_plan, validate_plan
from .progressive import TrueCardinalityModel, run_session


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        # argparse exits 2 on usage errors; 2 is reserved for infeasibility.
        return 0 if not err.code else 1
    try:
        return args.run(args)
    except InfeasibleError as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return 2
    except XflowError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xflow",
        description="Cross-platform dataflow plan optimizer.",
    )
    parser.add_argument("--version", action="version", version=f"xflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a plan file against the schema")
    p.add_argument("plan")
    p.set_defaults(run=_cmd_validate)

    p = sub.add_parser("inflate", help="expand a plan into its alternatives")
    p.add_argument("plan")
    p.add_argument("catalog", nargs="+", help="catalog file(s), merged in order")
    p.add_argument("--dot", action="store_true", help="emit DOT instead of a summary")
    p.set_defaults(run=_cmd_inflate)

    p = sub.add_parser("mct", help="solve one minimum conversion tree query")
    p.add_argument("ccg", nargs="+", help="catalog file(s) declaring channels/conversions")
    p.add_argument("--root", required=True, help="producer channel")
    p.add_argument(
        "--targets",
        required=True,
        help="consumer sets: members joined by '|', sets by ';' (e.g. \"A|B;C\")",
    )
    p.add_argument("--cardinality", type=float, default=1.0, help="data size for pricing")
    p.add_argument("--dot", action="store_true", help="emit the tree as DOT")
    p.set_defaults(run=_cmd_mct)

    p = sub.add_parser("optimize", help="pick the cheapest execution plan")
    p.add_argument("plan")
    p.add_argument("catalog")
    p.add_argument("ccg")
    p.add_argument("profiles")
    p.add_argument("--stats", required=True, help="source cardinality statistics file")
    p.add_argument("--prune", default="lossless", help="lossless | topk:K | none")
    p.add_argument("--seed", type=int, default=None, help="randomize join-group polling")
    p.add_argument("--explain", action="store_true", help="phase timings and counters to stderr")
    p.set_defaults(run=_cmd_optimize)

    p = sub.add_parser("learn", help="fit cost-function parameters to execution logs")
    p.add_argument("logs", help="log file, one JSON record per line")
    p.add_argument("templates", help="parameter template file (null = learn)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--generations", type=int, default=200)
    p.add_argument("--population", type=int, default=100)
    p.set_defaults(run=_cmd_learn)

    p = sub.add_parser("simulate", help="execute a plan against hidden true cardinalities")
    p.add_argument("plan")
    p.add_argument("truth", help="true-cardinality model file")
    p.add_argument("--catalog", required=True, nargs="+", help="catalog file(s)")
    p.add_argument("--stats", required=True, help="source statistics used for planning")
    p.add_argument("--prune", default="lossless")
    p.add_argument("--report", default=None, help="write the trace report to this file")
    p.add_argument(
        "--no-reoptimize",
        action="store_true",
        help="observe mismatches but keep the original plan",
    )
    p.set_defaults(run=_cmd_simulate)

    p = sub.add_parser("bench", help="run synthetic benchmark rows, CSV to stdout")
    p.add_argument("--topologies", default="pipeline", help="comma list: pipeline,fanout,tree,random")
    p.add_argument("--sizes", default="10", help="comma list of operator counts")
    p.add_argument("--k", type=int, default=3, help="alternatives per operator")
    p.add_argument("--rules", default="lossless", help="comma list: lossless,topk:K,none,exhaustive")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--platforms", type=int, default=None)
    p.add_argument("--max-pairs", type=int, default=DEFAULT_PAIR_BUDGET)
    p.add_argument("--no-timing", action="store_true", help="omit timing columns")
    p.set_defaults(run=_cmd_bench)

    return parser


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as err:
        raise InputError(f"cannot read '{path}': {err}") from None


def _fmt_interval(iv: IntervalEstimate) -> str:
    return f"[{iv.low:.10g}, {iv.high:.10g}] @ {iv.confidence:g}"


def _cmd_validate(args) -> int:
    plan = parse_plan(_read_text(args.plan))
    problems = validate_plan(plan)
    if problems:
        for p in problems:
            print(f"invalid: {p}", file=sys.stderr)
        return 1
    print(f"ok: {len(plan.operators)} operators, {len(plan.edges)} edges")
    return 0


def _load_valid_plan(path: str):
    plan = parse_plan(_read_text(path))
    problems = validate_plan(plan)
    if problems:
        raise InputError("; ".join(problems))
    return plan


def _cmd_inflate(args) -> int:
    plan = _load_valid_plan(args.plan)
    catalog = load_catalog_fragments(args.catalog)
    inflated = inflate(plan, catalog)
    if args.dot:
        sys.stdout.write(inflated_plan_dot(inflated))
        return 0
    for oid in sorted(inflated.operators):
        node = inflated.operators[oid]
        n = len(node.alternatives)
        noun = "alternative" if n == 1 else "alternatives"
        print(f"{oid} ({node.original.kind.name}): {n} {noun}")
    print(f"denoted plans: {inflated.denoted_plan_count()}")
    return 0


def _parse_target_sets(spec: str) -> list[frozenset[str]]:
    sets = []
    for part in spec.split(";"):
        members = frozenset(m.strip() for m in part.split("|") if m.strip())
        if not members:
            raise InputError("targets: empty consumer set")
        sets.append(members)
    if not sets:
        raise InputError("targets: at least one consumer set is required")
    return sets


def _cmd_mct(args) -> int:
    catalog = load_catalog_fragments(args.ccg)
    targets = _parse_target_sets(args.targets)
    card = IntervalEstimate.exact(args.cardinality)
    tree = find_mct(catalog.graph(), args.root, targets, card)
    if args.dot:
        sys.stdout.write(conversion_tree_dot(tree))
        return 0
    print(f"root: {tree.root}")
    if tree.edges:
        print("tree:")
        for (src, dst) in sorted(tree.edges):
            print(f"  {src} -> {dst}")
    else:
        print("tree: (empty; the root serves every consumer)")
    print("serves: " + "; ".join(tree.serves))
    print(f"cost: {_fmt_interval(tree.cost)}")
    return 0


def _cmd_optimize(args) -> int:
    rule = PruneRule.parse(args.prune)
    order_rng = random.Random(args.seed) if args.seed is not None else None

    t0 = time.perf_counter()
    plan = _load_valid_plan(args.plan)
    catalog = load_catalog_fragments([args.catalog, args.ccg, args.profiles])
    stats = load_source_stats(args.stats)
    inflated = inflate(plan, catalog)
    t1 = time.perf_counter()
    ann = annotate(inflated, catalog, stats)
    t2 = time.perf_counter()
    outcome = enumerate_plans(ann, rule, order_rng=order_rng)
    t3 = time.perf_counter()

    _print_outcome(ann, outcome)
    if args.explain:
        move_s = ann.ctx.seconds
        print("phase timings (ms):", file=sys.stderr)
        print(f"  inflation: {(t1 - t0) * 1000.0:.3f}", file=sys.stderr)
        print(f"  cardinality estimation: {(t2 - t1) * 1000.0:.3f}", file=sys.stderr)
        print(f"  data movement: {move_s * 1000.0:.3f}", file=sys.stderr)
        print(
            f"  enumeration: {max(t3 - t2 - move_s, 0.0) * 1000.0:.3f}",
            file=sys.stderr,
        )
        c = outcome.counters
        print(
            f"counters: pairs={c['pairs']} joins={c['joins']} "
            f"mct_queries={c['mct_queries']} mct_cache_hits={c['mct_cache_hits']}",
            file=sys.stderr,
        )
        print(f"denoted plans: {outcome.denoted}", file=sys.stderr)
    return 0


def _print_outcome(ann, outcome) -> None:
    sys.stdout.write(execution_plan_dot(outcome.execution_plan))
    print("assignment:")
    for op in ann.order:
        alt = ann.alts[op][outcome.assignment[op]]
        impl = " + ".join(m.op.id for m in alt.members)
        print(f"  {op} -> {impl}")
    print("platforms: " + ", ".join(outcome.platforms))
    ops_mid = outcome.operators_cost.midpoint
    move_mid = outcome.movement_cost.midpoint
    startup = outcome.startup_cost
    print(f"operators cost: {_fmt_interval(outcome.operators_cost)} (midpoint {ops_mid:.10g})")
    print(f"movement cost: {_fmt_interval(outcome.movement_cost)} (midpoint {move_mid:.10g})")
    print(f"startup cost: {startup:.10g}")
    # The reported total is the sum of the three midpoints printed above.
    print(f"total cost: {ops_mid + move_mid + startup:.10g}")


def _cmd_learn(args) -> int:
    records = []
    for i, line in enumerate(_read_text(args.logs).splitlines()):
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as err:
            raise InputError(f"{args.logs}:{i + 1}: not valid JSON: {err}") from None
        try:
            records.append(
                LogRecord(
                    operator=str(doc.get("operator", "")),
                    function=str(doc["function"]),
                    inputs=tuple(float(v) for v in doc["inputs"]),
                    time=float(doc["time"]),
                )
            )
        except (KeyError, TypeError, ValueError) as err:
            raise InputError(f"{args.logs}:{i + 1}: bad record: {err}") from None

    try:
        raw = json.loads(_read_text(args.templates))
    except json.JSONDecodeError as err:
        raise InputError(f"{args.templates}: not valid JSON: {err}") from None
    templates = {}
    for ref, body in raw.items():
        templates[ref] = {
            resource: TemplateResource(
                alpha=shape.get("alpha"),
                beta=shape.get("beta"),
                unit=float(shape.get("unit", 1.0)),
            )
            for resource, shape in body.items()
        }

    result = learn(
        records,
        templates,
        seed=args.seed,
        population=args.population,
        generations=args.generations,
    )
    for ref in sorted(result.params):
        for resource in sorted(result.params[ref]):
            ab = result.params[ref][resource]
            print(f"{ref}.{resource}: alpha={ab['alpha']:.10g} beta={ab['beta']:.10g}")
    print(f"loss: {result.loss:.10g}")
    print(f"generations: {len(result.history)}")
    return 0


def _load_truth(path: str) -> TrueCardinalityModel:
    try:
        doc = json.loads(_read_text(path))
    except json.JSONDecodeError as err:
        raise InputError(f"{path}: not valid JSON: {err}") from None
    if not isinstance(doc, dict) or "sources" not in doc:
        raise InputError(f"{path}: expected an object with a 'sources' section")
    return TrueCardinalityModel(
        source_cards={k: float(v) for k, v in doc["sources"].items()},
        selectivities={k: float(v) for k, v in doc.get("selectivities", {}).items()},
    )


def _cmd_simulate(args) -> int:
    rule = PruneRule.parse(args.prune)
    plan = _load_valid_plan(args.plan)
    truth = _load_truth(args.truth)
    catalog = load_catalog_fragments(args.catalog)
    stats = load_source_stats(args.stats)
    inflated = inflate(plan, catalog)
    ann = annotate(inflated, catalog, stats)
    outcome = enumerate_plans(ann, rule)
    report = run_session(
        ann, outcome, truth, rule=rule, auto_reoptimize=not args.no_reoptimize
    )

    text_parts = [
        "initial plan:",
        _indent(_assignment_text(ann, report.initial)),
        f"initial total cost: {report.initial.total_scalar:.10g}",
        "trace:",
        _indent(report.render().rstrip("\n")),
        "final plan:",
        _indent(_assignment_text(ann, report.final)),
        f"final total cost: {report.final.total_scalar:.10g}",
    ]
    text = "\n".join(text_parts) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    print(
        f"checkpoints fired: {report.checkpoints_fired}; "
        f"reoptimizations: {report.reoptimizations}; "
        f"final platforms: {', '.join(report.final.platforms)}"
    )
    return 0


def _assignment_text(ann, outcome) -> str:
    lines = []
    for op in ann.order:
        # After a re-optimization the assignment indexes the pinned inflation;
        # describe alternatives through the outcome's own plan nodes instead.
        nodes = outcome.execution_plan.node_for(op)
        impl = " + ".join(n.op.id for n in sorted(nodes, key=lambda n: n.id))
        lines.append(f"{op} -> {impl}")
    return "\n".join(lines)


def _indent(text: str) -> str:
    return "\n".join("  " + line for line in text.splitlines())


def _cmd_bench(args) -> int:
    topologies = [t.strip() for t in args.topologies.split(",") if t.strip()]
    rules = [r.strip() for r in args.rules.split(",") if r.strip()]
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise InputError(f"sizes: expected comma-separated integers, got '{args.sizes}'")
    for r in rules:
        if r != "exhaustive":
            PruneRule.parse(r)  # fail fast on typos before any run
    rows = run_bench(
        topologies,
        sizes,
        args.k,
        rules,
        seed=args.seed,
        platforms=args.platforms,
        max_pairs=args.max_pairs,
    )
    sys.stdout.write(render_csv(rows, timing=not args.no_timing))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
