"""xflow: cost-based optimizer for dataflow plans spanning several platforms.

The pipeline: parse a platform-agnostic plan, inflate it through operator
mappings into per-operator execution alternatives, annotate cardinalities and
costs as confidence-weighted intervals, plan data movement with minimum
conversion trees over the channel conversion graph, and enumerate complete
execution plans with lossless (or lossy) pruning. Extras: a genetic cost
parameter learner and a progressive re-optimization simulator.
"""

__version__ = "0.1.0"

from .catalog import (
    PlatformCatalog,
    build_catalog,
    load_catalog,
    load_catalog_fragments,
    load_source_stats,
)
from .ccg import (
    Channel,
    ChannelConversionGraph,
    ConversionEdge,
    ConversionTree,
    brute_force_mct,
    find_mct,
    kernelize,
)
from .cost import (
    CostModel,
    IntervalEstimate,
    LearnResult,
    LogRecord,
    PlatformCostProfile,
    ResourceCostFunction,
    TemplateResource,
    estimate_cardinalities,
    estimate_outputs,
    learn,
)
from .enumeration import (
    AnnotatedPlan,
    LOSSLESS,
    NO_PRUNE,
    OptimizationOutcome,
    PruneRule,
    annotate,
    enumerate_plans,
    exhaustive_enumerate,
    generate_topology,
)
from .errors import (
    CatalogError,
    InfeasibleError,
    InputError,
    InstanceTooLargeError,
    MappingDepthError,
    NoConversionTreeError,
    NoExecutableFullPlanError,
    PlanSchemaError,
    UncoverableOperatorError,
    XflowError,
)
from .mappings import (
    Alternative,
    GraphPattern,
    InflatedOperator,
    InflatedPlan,
    OperatorMapping,
    inflate,
    match,
)
from .plan import (
    DataflowPlan,
    Edge,
    ExecutionOperator,
    ExecutionPlan,
    Operator,
    OperatorKind,
    build_plan,
    parse_plan,
    serialize_plan,
    topo_order,
    validate_plan,
)
from .progressive import (
    OptimizationCheckpoint,
    SessionReport,
    TrueCardinalityModel,
    insert_checkpoints,
    reoptimize,
    run_session,
    simulate,
)

__all__ = [
    "__version__",
    "AnnotatedPlan",
    "Alternative",
    "CatalogError",
    "Channel",
    "ChannelConversionGraph",
    "ConversionEdge",
    "ConversionTree",
    "CostModel",
    "DataflowPlan",
    "Edge",
    "ExecutionOperator",
    "ExecutionPlan",
    "GraphPattern",
    "InfeasibleError",
    "InflatedOperator",
    "InflatedPlan",
    "InputError",
    "InstanceTooLargeError",
    "IntervalEstimate",
    "LOSSLESS",
    "LearnResult",
    "LogRecord",
    "MappingDepthError",
    "NO_PRUNE",
    "NoConversionTreeError",
    "NoExecutableFullPlanError",
    "OperatorKind",
    "OperatorMapping",
    "Operator",
    "OptimizationCheckpoint",
    "OptimizationOutcome",
    "PlanSchemaError",
    "PlatformCatalog",
    "PlatformCostProfile",
    "PruneRule",
    "ResourceCostFunction",
    "SessionReport",
    "TemplateResource",
    "TrueCardinalityModel",
    "UncoverableOperatorError",
    "XflowError",
    "annotate",
    "brute_force_mct",
    "build_catalog",
    "build_plan",
    "enumerate_plans",
    "estimate_cardinalities",
    "estimate_outputs",
    "exhaustive_enumerate",
    "find_mct",
    "generate_topology",
    "inflate",
    "insert_checkpoints",
    "kernelize",
    "learn",
    "load_catalog",
    "load_catalog_fragments",
    "load_source_stats",
    "match",
    "parse_plan",
    "reoptimize",
    "run_session",
    "serialize_plan",
    "simulate",
    "topo_order",
    "validate_plan",
]
