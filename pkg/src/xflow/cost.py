"""Interval cost model: cardinality estimates, operator costing, learning.

Cardinalities and costs are intervals with a confidence in [0, 1]. Arithmetic
is endpoint-wise and monotone; combining estimates keeps the minimum
confidence. Scalar comparisons use the midpoint, tie-broken by the low
endpoint (callers add a canonical-id tie-break where full determinism is
needed).

Operator cost is a sum over resources (cpu, mem, disk, net) of an affine
usage function alpha * cardinality + beta, each weighted by the platform's
unit cost for that resource. Platform start-up costs live on the profile and
are charged once per platform used by a plan, not here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InsufficientLogsError, UnknownCostFunctionError
from .plan import ExecutionOperator

RESOURCES = ("cpu", "mem", "disk", "net")


@dataclass(frozen=True)
class IntervalEstimate:
    low: float
    high: float
    confidence: float = 1.0

    def __post_init__(self):
        if self.low < 0 or self.high < self.low:
            raise ValueError(f"malformed interval [{self.low}, {self.high}]")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @classmethod
    def exact(cls, value: float, confidence: float = 1.0) -> "IntervalEstimate":
        return cls(value, value, confidence)

    @classmethod
    def zero(cls) -> "IntervalEstimate":
        return cls(0.0, 0.0, 1.0)

    def __add__(self, other: "IntervalEstimate") -> "IntervalEstimate":
        return IntervalEstimate(
            self.low + other.low,
            self.high + other.high,
            min(self.confidence, other.confidence),
        )

    def times(self, other: "IntervalEstimate") -> "IntervalEstimate":
        return IntervalEstimate(
            self.low * other.low,
            self.high * other.high,
            min(self.confidence, other.confidence),
        )

    def scaled(self, factor: float) -> "IntervalEstimate":
        if factor < 0:
            raise ValueError("negative scale factor")
        return IntervalEstimate(self.low * factor, self.high * factor, self.confidence)

    def with_confidence(self, confidence: float) -> "IntervalEstimate":
        return IntervalEstimate(self.low, self.high, confidence)

    @property
    def midpoint(self) -> float:
        return (self.low + self.high) / 2.0

    def key(self) -> tuple[float, float]:
        """Comparison key: midpoint first, low endpoint breaks ties."""
        return (self.midpoint, self.low)

    def width_ratio(self) -> float:
        if self.low == 0.0:
            return math.inf if self.high > 0.0 else 1.0
        return self.high / self.low


def sum_intervals(items: Iterable[IntervalEstimate]) -> IntervalEstimate:
    total = IntervalEstimate.zero()
    for item in items:
        total = total + item
    return total


@dataclass(frozen=True)
class ResourceCostFunction:
    """Usage of one resource as an affine function of input cardinality."""

    alpha: float
    beta: float

    def usage(self, cardinality: float) -> float:
        return self.alpha * cardinality + self.beta


@dataclass(frozen=True)
class PlatformCostProfile:
    platform: str
    unit_costs: Mapping[str, float]
    startup_cost: float = 0.0
    hardware: Mapping[str, float] = field(default_factory=dict)


def operator_cost(
    op: ExecutionOperator,
    c_in: IntervalEstimate,
    profile: PlatformCostProfile,
    functions: Mapping[str, Mapping[str, ResourceCostFunction]],
) -> IntervalEstimate:
    """Cost interval for one execution operator at the given input cardinality.

    Both endpoints run through the same monotone affine functions, so the
    result is a valid interval; confidence is inherited from the cardinality.
    """
    if op.cost_function_ref not in functions:
        raise UnknownCostFunctionError(
            f"operator '{op.id}' references unknown cost function '{op.cost_function_ref}'"
        )
    per_resource = functions[op.cost_function_ref]
    low = high = 0.0
    for resource, fn in per_resource.items():
        unit = profile.unit_costs.get(resource, 0.0)
        low += fn.usage(c_in.low) * unit
        high += fn.usage(c_in.high) * unit
    return IntervalEstimate(low, high, c_in.confidence)


class CostModel:
    """Profiles plus the cost-function table, bundled for convenience."""

    def __init__(
        self,
        profiles: Mapping[str, PlatformCostProfile],
        functions: Mapping[str, Mapping[str, ResourceCostFunction]],
    ):
        self.profiles = dict(profiles)
        self.functions = dict(functions)

    def cost(self, op: ExecutionOperator, c_in: IntervalEstimate) -> IntervalEstimate:
        profile = self.profiles[op.platform]
        return operator_cost(op, c_in, profile, self.functions)

    def startup(self, platform: str) -> float:
        return self.profiles[platform].startup_cost


# --- cardinality rules ------------------------------------------------------

# Selectivity defaults used when an operator carries no hint; a defaulted rule
# caps confidence at DEFAULT_CONFIDENCE so checkpoints can react downstream.
DEFAULT_SELECTIVITY = {
    "Filter": 0.5,
    "FlatMap": 1.0,
    "Join": 1.0,
    "ReduceBy": 0.1,
    "GroupBy": 0.1,
    "Distinct": 0.5,
    "Sample": 0.1,
}
DEFAULT_CONFIDENCE = 0.5


def estimate_outputs(kind, inputs: Sequence[IntervalEstimate]) -> list[IntervalEstimate]:
    """Output cardinality interval(s) for one operator given its inputs.

    Side inputs (slots past the rule's primary arity) do not influence the
    estimate. Loop heads are handled upstream: slot out0 mirrors the initial
    input and out1 is patched to the feedback source's estimate once the body
    has been estimated.
    """
    name = kind.name
    if name in ("Map", "Sort"):
        return [inputs[0]]
    if name in ("Reduce", "Count"):
        return [IntervalEstimate(1.0, 1.0, inputs[0].confidence)]
    if name == "Union":
        return [inputs[0] + inputs[1]]
    if name == "Cartesian":
        return [inputs[0].times(inputs[1])]
    if name == "Join":
        sel, conf_cap = _selectivity(kind)
        low = min(inputs[0].low, inputs[1].low) * sel
        high = min(inputs[0].high, inputs[1].high) * sel
        conf = min(inputs[0].confidence, inputs[1].confidence, conf_cap)
        return [IntervalEstimate(low, high, conf)]
    if name in DEFAULT_SELECTIVITY:  # Filter, FlatMap, ReduceBy, GroupBy, Distinct, Sample
        sel, conf_cap = _selectivity(kind)
        src = inputs[0]
        return [
            IntervalEstimate(src.low * sel, src.high * sel, min(src.confidence, conf_cap))
        ]
    if name == "RepeatLoop":
        return [inputs[0], inputs[0]]
    if kind.arity_out == 0:
        return []
    # Unhandled multi-output kinds would need explicit rules; default to
    # forwarding the primary input on every slot.
    return [inputs[0] for _ in range(kind.arity_out)]


def _selectivity(kind) -> tuple[float, float]:
    if kind.selectivity is not None:
        return kind.selectivity, 1.0
    return DEFAULT_SELECTIVITY[kind.name], DEFAULT_CONFIDENCE


def estimate_cardinalities(
    plan,
    source_stats: Mapping,
    overrides: Mapping[tuple[str, int], "IntervalEstimate"] | None = None,
) -> dict[tuple[str, int], IntervalEstimate]:
    """Interval cardinality per (operator, output slot), bottom-up.

    `plan` is a DataflowPlan or anything carrying one as `.plan`. Source
    operators take their estimate from `source_stats` (op id -> interval, or a
    dict with low/high/confidence). A loop head initially mirrors its initial
    input on both outputs; its final-output slot is patched to the feedback
    source's estimate, which is available before any consumer outside the body
    asks for it because loop bodies are contiguous in the traversal order.

    `overrides` pins specific output slots (observed values during progressive
    re-optimization); downstream operators see the override, not the rule.
    """
    from .errors import MissingSourceStatsError
    from .plan import DataflowPlan, LOOP_FINAL_SLOT, LOOP_KINDS, topo_order

    dataflow: DataflowPlan = plan if isinstance(plan, DataflowPlan) else plan.plan
    cards: dict[tuple[str, int], IntervalEstimate] = {}
    feedback_source: dict[str, tuple[str, int]] = {}

    def as_interval(raw) -> IntervalEstimate:
        if isinstance(raw, IntervalEstimate):
            return raw
        if isinstance(raw, (int, float)):
            return IntervalEstimate.exact(float(raw))
        return IntervalEstimate(
            float(raw["low"]), float(raw["high"]), float(raw.get("confidence", 1.0))
        )

    def resolve(op_id: str, slot: int) -> IntervalEstimate:
        got = cards.get((op_id, slot))
        if got is not None:
            return got
        op = dataflow.op(op_id)
        if op.kind.name in LOOP_KINDS and slot == LOOP_FINAL_SLOT:
            src = feedback_source.get(op_id)
            if src is not None and src in cards:
                cards[(op_id, slot)] = cards[src]
                return cards[src]
        raise KeyError((op_id, slot))

    overrides = overrides or {}

    for op_id in topo_order(dataflow):
        op = dataflow.op(op_id)
        if op.kind.arity_in == 0:
            if (op_id, 0) in overrides:
                cards[(op_id, 0)] = overrides[(op_id, 0)]
                continue
            if op_id not in source_stats:
                raise MissingSourceStatsError(
                    f"no cardinality statistics for source operator '{op_id}'"
                )
            cards[(op_id, 0)] = as_interval(source_stats[op_id])
            continue
        inputs: list[IntervalEstimate] = []
        for slot in range(op.kind.arity_in):
            edge = next(e for e in dataflow.in_edges(op_id) if e.dst_slot == slot)
            if edge.feedback:
                feedback_source[op_id] = (edge.src, edge.src_slot)
                # Estimated later; loop rules only read the initial input.
                inputs.append(IntervalEstimate.zero())
                continue
            inputs.append(resolve(edge.src, edge.src_slot))
        loop_head = op.kind.name in LOOP_KINDS
        for slot, estimate in enumerate(estimate_outputs(op.kind, inputs)):
            if loop_head and slot == LOOP_FINAL_SLOT:
                continue  # patched from the feedback source on first use
            cards[(op_id, slot)] = overrides.get((op_id, slot), estimate)

    # Settle any loop finals nobody consumed during the pass.
    for op_id, src in feedback_source.items():
        key = (op_id, LOOP_FINAL_SLOT)
        if src in cards:
            cards[key] = cards[src]
    return cards


# --- learning ---------------------------------------------------------------


@dataclass(frozen=True)
class LogRecord:
    """One observed operator execution: which cost function ran, at what
    input cardinality (summed over inputs), and the measured time."""

    operator: str
    function: str
    inputs: tuple[float, ...]
    time: float

    @property
    def cardinality(self) -> float:
        return float(sum(self.inputs))


@dataclass(frozen=True)
class TemplateResource:
    """Shape of one resource term: fixed values pin a parameter, None learns it."""

    alpha: float | None = None
    beta: float | None = None
    unit: float = 1.0


@dataclass(frozen=True)
class LearnResult:
    params: dict
    loss: float
    history: tuple[float, ...]
    vector: tuple[float, ...]


def relative_loss(t: float, t_est: float, smoothing: float = 1.0) -> float:
    """Squared smoothed relative error between a measured and estimated time.

    The additive smoothing keeps near-zero measurements from dominating and
    makes loss(0, 0) == (s/s)^2 == 1 rather than undefined.
    """
    return ((abs(t - t_est) + smoothing) / (t + smoothing)) ** 2


def learn(
    logs: Sequence[LogRecord],
    templates: Mapping[str, Mapping[str, TemplateResource]],
    *,
    seed: int = 0,
    population: int = 100,
    generations: int = 200,
    tournament: int = 4,
    crossover_rate: float = 0.7,
    mutation_rate: float = 0.1,
    elitism: int = 2,
    smoothing: float = 1.0,
    polish: bool = True,
) -> LearnResult:
    """Fit free cost-function parameters to execution logs.

    A seeded genetic search (tournament selection, uniform crossover, per-gene
    Gaussian mutation, elitism) minimizes the mean squared smoothed relative
    error; a deterministic Nelder-Mead refinement then pins down the optimum,
    which a GA alone only approaches. The returned history is the best-so-far
    loss per generation and is nonincreasing.
    """
    genes: list[tuple[str, str, str]] = []  # (function ref, resource, "alpha"|"beta")
    for ref in sorted(templates):
        for resource in sorted(templates[ref]):
            shape = templates[ref][resource]
            if shape.alpha is None:
                genes.append((ref, resource, "alpha"))
            if shape.beta is None:
                genes.append((ref, resource, "beta"))
    if not genes:
        raise InsufficientLogsError("templates contain no free parameters to learn")

    refs_with_free = {ref for ref, _, _ in genes}
    records = [r for r in logs if r.function in templates]
    covered = {r.function for r in records}
    missing = sorted(refs_with_free - covered)
    if missing:
        raise InsufficientLogsError(
            "no log records for parameter group(s): " + ", ".join(missing)
        )

    # t_est is linear in the gene vector: t_est = M @ x + base.
    n, d = len(records), len(genes)
    M = np.zeros((n, d))
    base = np.zeros(n)
    t = np.array([r.time for r in records])
    c = np.array([r.cardinality for r in records])
    gene_index = {g: i for i, g in enumerate(genes)}
    for i, rec in enumerate(records):
        for resource, shape in templates[rec.function].items():
            if shape.alpha is None:
                M[i, gene_index[(rec.function, resource, "alpha")]] += shape.unit * c[i]
            else:
                base[i] += shape.unit * shape.alpha * c[i]
            if shape.beta is None:
                M[i, gene_index[(rec.function, resource, "beta")]] += shape.unit
            else:
                base[i] += shape.unit * shape.beta

    denom = t + smoothing

    def mean_loss_many(pop: np.ndarray) -> np.ndarray:
        est = pop @ M.T + base
        return np.mean(((np.abs(t - est) + smoothing) / denom) ** 2, axis=1)

    def mean_loss_one(x: np.ndarray) -> float:
        return float(mean_loss_many(np.clip(x, 0.0, None)[None, :])[0])

    rng = np.random.default_rng(seed)
    scale_alpha = 2.0 * (t.max() / max(c.max(), 1.0)) + 1.0
    scale_beta = 2.0 * t.max() + 1.0
    scales = np.array(
        [scale_alpha if g[2] == "alpha" else scale_beta for g in genes]
    )
    pop = rng.uniform(0.0, 1.0, size=(population, d)) * scales

    history: list[float] = []
    best_x = pop[0].copy()
    best_loss = math.inf
    for _ in range(generations):
        losses = mean_loss_many(pop)
        gen_best = int(np.argmin(losses))
        if losses[gen_best] < best_loss:
            best_loss = float(losses[gen_best])
            best_x = pop[gen_best].copy()
        history.append(best_loss)

        order = np.argsort(losses, kind="stable")
        elite = pop[order[:elitism]].copy()
        children = [elite]
        n_children = population - elitism
        # Tournament selection for both parents of every child.
        picks = rng.integers(0, population, size=(n_children, 2, tournament))
        parent_idx = picks[
            np.arange(n_children)[:, None, None],
            np.arange(2)[None, :, None],
            np.argmin(losses[picks], axis=2)[:, :, None],
        ][:, :, 0]
        pa = pop[parent_idx[:, 0]]
        pb = pop[parent_idx[:, 1]]
        do_cross = rng.uniform(size=(n_children, 1)) < crossover_rate
        gene_pick = rng.uniform(size=(n_children, d)) < 0.5
        kids = np.where(do_cross & gene_pick, pb, pa)
        mutate = rng.uniform(size=(n_children, d)) < mutation_rate
        noise = rng.normal(0.0, 0.1, size=(n_children, d)) * scales
        kids = np.clip(kids + mutate * noise, 0.0, None)
        children.append(kids)
        pop = np.vstack(children)

    if polish:
        from scipy.optimize import minimize

        refined = minimize(
            mean_loss_one,
            best_x,
            method="Nelder-Mead",
            bounds=[(0.0, None)] * d,
            options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000 * d, "maxfev": 4000 * d},
        )
        if refined.fun < best_loss:
            best_loss = float(refined.fun)
            best_x = np.clip(refined.x, 0.0, None)
            history.append(best_loss)

    params: dict = {}
    for ref in sorted(templates):
        params[ref] = {}
        for resource in sorted(templates[ref]):
            shape = templates[ref][resource]
            alpha = shape.alpha
            if alpha is None:
                alpha = float(best_x[gene_index[(ref, resource, "alpha")]])
            beta = shape.beta
            if beta is None:
                beta = float(best_x[gene_index[(ref, resource, "beta")]])
            params[ref][resource] = {"alpha": alpha, "beta": beta}
    return LearnResult(
        params=params,
        loss=best_loss,
        history=tuple(history),
        vector=tuple(float(v) for v in best_x),
    )
