"""Progressive optimization: checkpoints, simulated execution, re-planning.

A checkpoint marks an execution-plan edge whose cardinality estimate is
uncertain (low confidence or wide interval) and whose channel is reusable, so
execution can pause there with the data at rest. The simulator replays the
plan against hidden true cardinalities; when an observation at a checkpoint
considerably mismatches the estimate, the remaining plan is re-optimized with
executed operators pinned to their chosen alternatives and observations used
as exact cardinalities. Sunk costs never participate in comparisons.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator, Mapping

from .cost import IntervalEstimate, estimate_cardinalities
from .enumeration import (
    AnnotatedPlan,
    LOSSLESS,
    OptimizationOutcome,
    PruneRule,
    enumerate_plans,
)
from .errors import InputError
from .mappings import InflatedOperator, InflatedPlan
from .plan import DataflowPlan, ExecutionPlan, topo_order

CONFIDENCE_THRESHOLD = 0.9
WIDTH_THRESHOLD = 4.0
MISMATCH_RATIO = 2.0


@dataclass(frozen=True)
class OptimizationCheckpoint:
    edge: tuple  # ExecEdge key
    output: tuple[str, int]  # producing (plan operator, slot)
    channel: str
    reason: str  # "low-confidence" | "wide-interval"
    estimate: IntervalEstimate

    @property
    def position(self) -> str:
        src, src_slot, dst, dst_slot, _channel, _fb = self.edge
        return f"{src}[{src_slot}]->{dst}[{dst_slot}]"


def insert_checkpoints(
    plan: ExecutionPlan,
    edge_cards: Mapping[tuple, IntervalEstimate],
    edge_outputs: Mapping[tuple, tuple[str, int]],
    reusable,
    confidence_threshold: float = CONFIDENCE_THRESHOLD,
    width_threshold: float = WIDTH_THRESHOLD,
) -> list[OptimizationCheckpoint]:
    """Checkpoints for edges that are both uncertain and at rest: estimate has
    low confidence or a wide interval, and the channel is reusable so paused
    data can be re-read. At most one checkpoint per produced output.
    `reusable` maps a channel id to a bool, as a callable or a mapping."""
    if callable(reusable):
        is_reusable = reusable
    else:
        table = dict(reusable)
        is_reusable = table.__getitem__

    checkpoints = []
    seen: set[tuple[str, int]] = set()
    for e in plan.edges:
        key = e.key()
        if key not in edge_cards:
            continue
        output = edge_outputs[key]
        if output in seen:
            continue
        if not is_reusable(e.channel):
            continue
        estimate = edge_cards[key]
        reason = None
        if estimate.confidence < confidence_threshold:
            reason = "low-confidence"
        elif estimate.width_ratio() > width_threshold:
            reason = "wide-interval"
        if reason is None:
            continue
        seen.add(output)
        checkpoints.append(
            OptimizationCheckpoint(
                edge=key, output=output, channel=e.channel, reason=reason, estimate=estimate
            )
        )
    return checkpoints


@dataclass(frozen=True)
class TrueCardinalityModel:
    """Hidden truth the simulator executes against: exact source cardinalities
    plus true selectivities per operator id (falling back to the estimator's
    rules where unspecified)."""

    source_cards: Mapping[str, float]
    selectivities: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for op, sel in self.selectivities.items():
            if sel < 0:
                raise InputError(f"true selectivity for '{op}' must be nonnegative")


def true_cardinalities(plan: DataflowPlan, model: TrueCardinalityModel) -> dict[tuple[str, int], float]:
    """Exact per-slot cardinalities under the truth model, computed by running
    the estimator on a plan whose selectivity hints are the true values."""
    ops = []
    for op in plan.operators.values():
        sel = model.selectivities.get(op.id)
        if sel is not None:
            op = dataclasses.replace(op, kind=dataclasses.replace(op.kind, selectivity=sel))
        ops.append(op)
    shadow = DataflowPlan(ops, plan.edges)
    stats = {src: IntervalEstimate.exact(float(model.source_cards[src]))
             for src in shadow.sources()}
    cards = estimate_cardinalities(shadow, stats)
    return {slot: iv.low for slot, iv in cards.items()}


def mismatched(observed: float, estimate: IntervalEstimate, ratio: float = MISMATCH_RATIO) -> bool:
    """Considerable mismatch: outside the interval, or off the midpoint by
    more than the configured factor in either direction."""
    if observed < estimate.low or observed > estimate.high:
        return True
    mid = estimate.midpoint
    if mid == 0.0:
        return observed > 0.0
    if observed == 0.0:
        return True
    r = observed / mid if observed >= mid else mid / observed
    return r > ratio


@dataclass(frozen=True)
class ExecutionTrace:
    observed: dict[tuple[str, int], float]
    executed: tuple[str, ...]
    remaining: tuple[str, ...]


@dataclass(frozen=True)
class TraceEvent:
    kind: str  # "execute" | "checkpoint" | "reoptimize"
    operator: str
    trace: ExecutionTrace
    checkpoint: OptimizationCheckpoint | None = None
    mismatch: bool | None = None
    changed: bool | None = None
    remaining_before: float | None = None
    remaining_after: float | None = None
    outcome: OptimizationOutcome | None = None  # set on reoptimize events


def pin_executed(
    ann: AnnotatedPlan, assignment: Mapping[str, int], executed: set[str]
) -> InflatedPlan:
    """The inflated plan with executed operators frozen to their chosen
    alternative (index 0 afterwards); unexecuted operators keep all options."""
    ops = {}
    for op_id, inflated_op in ann.inflated.operators.items():
        if op_id in executed:
            chosen = inflated_op.alternatives[assignment[op_id]]
            ops[op_id] = InflatedOperator(inflated_op.original, (chosen,))
        else:
            ops[op_id] = inflated_op
    return InflatedPlan(ann.plan, ops)


def reannotate(
    ann: AnnotatedPlan,
    inflated: InflatedPlan,
    observed: Mapping[tuple[str, int], float],
) -> AnnotatedPlan:
    """A fresh annotated plan under observed cardinalities (exact, confidence
    1.0), repriced with the original annotation's cost hook when present."""
    overrides = {
        slot: IntervalEstimate.exact(float(v)) for slot, v in observed.items()
    }
    stats = {src: ann.cards[(src, 0)] for src in ann.plan.sources()}
    cards = estimate_cardinalities(ann.plan, stats, overrides=overrides)
    alt_costs: dict[tuple[str, int], IntervalEstimate] = {}
    for op_id in sorted(inflated.operators):
        for ai, alt in enumerate(inflated.operators[op_id].alternatives):
            if ann.recost is None:
                # Costs independent of cardinalities: reuse by alternative key.
                original = ann.inflated.operators[op_id].alternatives
                src_ai = next(i for i, a in enumerate(original) if a.key == alt.key)
                alt_costs[(op_id, ai)] = IntervalEstimate(
                    *ann.alt_cost[(op_id, src_ai)]
                )
            else:
                alt_costs[(op_id, ai)] = ann.recost(op_id, alt, cards).scaled(
                    ann.mult[op_id]
                )
    return AnnotatedPlan(
        inflated,
        cards,
        ann.mult,
        alt_costs,
        ann.startups,
        ann.ctx.graph,
        ann.edge_platforms,
        ann._conv_ops,
        recost=ann.recost,
    )


def remaining_cost(
    ann: AnnotatedPlan, assignment: Mapping[str, int], executed: set[str]
) -> float:
    """Scalar cost of what is left to run under `ann`'s cardinalities:
    unexecuted operators, data movement for every output whose producer or
    some consumer has not run yet (feedback edges keep movement pending until
    the in-body producer runs), and start-up for platforms not already
    started. Sunk costs are excluded entirely."""
    lo = hi = 0.0
    bits = 0
    started = 0
    for op in ann.order:
        ai = assignment[op]
        if op in executed:
            started |= ann.alt_bits[(op, ai)]
            continue
        c_lo, c_hi, _conf = ann.alt_cost[(op, ai)]
        lo += c_lo
        hi += c_hi
        bits |= ann.alt_bits[(op, ai)]
    for out, consumers in ann.outputs.items():
        if not consumers:
            continue
        op, slot = out
        root = ann.out_channel[(op, assignment[op], slot)]
        tids = tuple(
            ann.accept_id[(cop, assignment[cop], cslot)] for (cop, cslot) in consumers
        )
        res = ann.ctx.stitch(root, tids, ann.cards[out])
        if res is None:
            return float("inf")
        if op in executed and all(c in executed for c, _ in consumers):
            started |= res[3]  # sunk conversions already paid their start-up
            continue
        scale = ann.out_mult[out]
        lo += res[0] * scale
        hi += res[1] * scale
        bits |= res[3]
    startup = ann.startup_of_bits(bits & ~started)
    return (lo + hi) / 2.0 + startup


def reoptimize(
    ann: AnnotatedPlan,
    outcome: OptimizationOutcome,
    executed: set[str],
    observed: Mapping[tuple[str, int], float],
    rule: PruneRule = LOSSLESS,
) -> tuple[OptimizationOutcome, AnnotatedPlan, float, float]:
    """Re-plan the remainder: pin executed operators, adopt observations as
    exact cardinalities, enumerate again. Returns the new outcome, the updated
    annotation, and the remaining costs of continuing the old plan vs the new
    plan under the updated cardinalities."""
    pinned = pin_executed(ann, outcome.assignment, executed)
    ann2 = reannotate(ann, pinned, observed)
    # Executed operators contribute the same sunk cost to every pinned
    # assignment, so the pinned-total optimum is also the remainder optimum.
    old_assignment = {
        op: (0 if op in executed else outcome.assignment[op]) for op in ann.order
    }
    before = remaining_cost(ann2, old_assignment, executed)
    new_outcome = enumerate_plans(ann2, rule)
    after = remaining_cost(ann2, new_outcome.assignment, executed)
    return new_outcome, ann2, before, after


def simulate(
    ann: AnnotatedPlan,
    outcome: OptimizationOutcome,
    model: TrueCardinalityModel,
    *,
    auto_reoptimize: bool = True,
    rule: PruneRule = LOSSLESS,
    confidence_threshold: float = CONFIDENCE_THRESHOLD,
    width_threshold: float = WIDTH_THRESHOLD,
    mismatch_ratio: float = MISMATCH_RATIO,
) -> Iterator[TraceEvent]:
    """Walk the plan in operator order against the truth model, firing each
    checkpoint once when its producing operator completes. On a considerable
    mismatch (and `auto_reoptimize`), the remainder is re-planned and the walk
    continues under the new plan; multiple checkpoints may fire in one run."""
    truth = true_cardinalities(ann.plan, model)
    order = topo_order(ann.plan)
    current_ann = ann
    current = outcome
    checkpoints = insert_checkpoints(
        current.execution_plan,
        current.edge_cards,
        current.edge_outputs,
        current_ann.ctx.graph.reusable,
        confidence_threshold,
        width_threshold,
    )
    fired: set[tuple[str, int]] = set()
    observed: dict[tuple[str, int], float] = {}
    executed: list[str] = []

    for op in order:
        executed.append(op)
        for slot in range(ann.plan.op(op).kind.arity_out):
            observed[(op, slot)] = truth[(op, slot)]
        trace = ExecutionTrace(
            observed=dict(observed),
            executed=tuple(executed),
            remaining=tuple(o for o in order if o not in executed),
        )
        yield TraceEvent(kind="execute", operator=op, trace=trace)

        executed_set = set(executed)
        for cp in checkpoints:
            if cp.output in fired or cp.output[0] != op:
                continue
            consumers = ann.outputs.get(cp.output, ())
            if all(c in executed_set for c, _ in consumers):
                continue  # nothing left downstream to re-plan
            fired.add(cp.output)
            got = observed[cp.output]
            bad = mismatched(got, cp.estimate, mismatch_ratio)
            yield TraceEvent(
                kind="checkpoint", operator=op, trace=trace, checkpoint=cp, mismatch=bad
            )
            if not (bad and auto_reoptimize):
                continue
            new_outcome, new_ann, before, after = reoptimize(
                current_ann, current, executed_set, observed, rule
            )
            changed = new_outcome.assignment != {
                o: (0 if o in executed_set else current.assignment[o])
                for o in current_ann.order
            }
            yield TraceEvent(
                kind="reoptimize",
                operator=op,
                trace=trace,
                checkpoint=cp,
                mismatch=bad,
                changed=changed,
                remaining_before=before,
                remaining_after=after,
                outcome=new_outcome,
            )
            current_ann, current = new_ann, new_outcome
            checkpoints = insert_checkpoints(
                current.execution_plan,
                current.edge_cards,
                current.edge_outputs,
                current_ann.ctx.graph.reusable,
                confidence_threshold,
                width_threshold,
            )


@dataclass
class SessionReport:
    initial: OptimizationOutcome
    final: OptimizationOutcome
    events: list[TraceEvent]
    checkpoints_fired: int
    reoptimizations: int

    def render(self) -> str:
        lines = []
        for ev in self.events:
            if ev.kind == "execute":
                outs = sorted(
                    (slot, v)
                    for (o, slot), v in ev.trace.observed.items()
                    if o == ev.operator
                )
                got = ", ".join(f"out[{s}]={v:g}" for s, v in outs)
                lines.append(f"execute {ev.operator}" + (f": {got}" if got else ""))
            elif ev.kind == "checkpoint":
                cp = ev.checkpoint
                got = ev.trace.observed[cp.output]
                lines.append(
                    f"checkpoint {cp.position} ({cp.reason}): estimated "
                    f"[{cp.estimate.low:g}, {cp.estimate.high:g}]@{cp.estimate.confidence:g}, "
                    f"observed {got:g} -> {'MISMATCH' if ev.mismatch else 'ok'}"
                )
            elif ev.kind == "reoptimize":
                lines.append(
                    f"reoptimize after {ev.operator}: remaining cost "
                    f"{ev.remaining_before:g} -> {ev.remaining_after:g} "
                    f"({'new plan' if ev.changed else 'plan unchanged'})"
                )
        lines.append(
            f"checkpoints fired: {self.checkpoints_fired}; "
            f"reoptimizations: {self.reoptimizations}"
        )
        return "\n".join(lines) + "\n"


def run_session(
    ann: AnnotatedPlan,
    outcome: OptimizationOutcome,
    model: TrueCardinalityModel,
    **kwargs,
) -> SessionReport:
    events = list(simulate(ann, outcome, model, **kwargs))
    final = outcome
    reopts = 0
    fired = 0
    for ev in events:
        if ev.kind == "checkpoint":
            fired += 1
        elif ev.kind == "reoptimize":
            reopts += 1
            final = ev.outcome
    return SessionReport(
        initial=outcome, final=final, events=events,
        checkpoints_fired=fired, reoptimizations=reopts,
    )
