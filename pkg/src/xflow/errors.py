"""Exception hierarchy shared across the optimizer.

Two branches matter for the CLI: input problems (bad files, bad references,
bad arguments) exit with code 1, infeasibility (no conversion tree, no
executable plan) exits with code 2.
"""

from __future__ import annotations


class XflowError(Exception):
    """Base class for all optimizer errors."""


class InputError(XflowError):
    """Malformed or inconsistent user input (schema, references, arguments)."""


class InfeasibleError(XflowError):
    """The instance has no solution (regardless of cost)."""


class PlanSchemaError(InputError):
    """A plan file violates the documented schema. Message carries a field path."""


class CatalogError(InputError):
    """A catalog file is malformed or internally inconsistent."""


class UncoverableOperatorError(InputError):
    """No mapping chain turns an abstract operator into execution operators."""

    def __init__(self, kind: str, operator_id: str | None = None):
        self.kind = kind
        self.operator_id = operator_id
        where = f" (operator '{operator_id}')" if operator_id else ""
        super().__init__(f"no mapping yields an executable alternative for kind '{kind}'{where}")


class MappingDepthError(InputError):
    """Decomposition recursion exceeded the depth limit; names the mapping chain."""

    def __init__(self, chain: tuple[str, ...]):
        self.chain = chain
        super().__init__(
            "mapping decomposition exceeded depth 4; cyclic mapping set: " + " -> ".join(chain)
        )


class MissingSourceStatsError(InputError):
    """A source operator has no cardinality statistics."""


class UnknownCostFunctionError(InputError):
    """An execution operator references a cost function the model does not define."""


class InsufficientLogsError(InputError):
    """The learner needs at least one log record per parameter group."""


class NoConversionTreeError(InfeasibleError):
    """No conversion tree connects the root channel to every target set."""


class NoExecutableFullPlanError(InfeasibleError):
    """Enumeration finished with an empty set of complete subplans."""


class InstanceTooLargeError(XflowError):
    """A brute-force oracle refused an instance beyond its guard."""
