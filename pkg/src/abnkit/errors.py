"""Exception hierarchy shared across the package.

Every error raised on a user-facing path derives from :class:`AbnError` so
the CLI can map failures to a single machine-parsable line.
"""


class AbnError(Exception):
    """Base class for all package errors."""


# --- graph / formula ----------------------------------------------------


class UnknownName(AbnError):
    """An identifier does not match any known node/column name."""


class FormulaError(AbnError):
    """Malformed constraint formula (missing '~', dangling separator, ...)."""


class SelfArc(AbnError):
    """An explicit arc from a node to itself was requested."""


class CyclicInput(AbnError):
    """A DAG-only operation received a cyclic adjacency matrix."""

    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle through nodes: " + " -> ".join(map(str, self.cycle)))


class NodeSetMismatch(AbnError):
    """Two graphs that must share a node set do not."""


class ConstraintError(AbnError):
    """Inconsistent ban/retain/max-parent constraints."""


# --- data ---------------------------------------------------------------


class DataError(AbnError):
    """Base class for dataset validation failures."""


class MissingColumn(DataError):
    """Declared column absent from the file, or file column undeclared."""


class BadLevelCount(DataError):
    """A binomial column does not have exactly two observed levels."""


class NegativeCount(DataError):
    """A poisson column contains negative or non-integer values."""


class MissingValue(DataError):
    """The data contain missing values; complete data are required."""


class ZeroVariance(DataError):
    """A gaussian column is constant and cannot be standardized."""


class SelfParent(AbnError):
    """A node was listed in its own parent set."""


# --- fitting / scoring --------------------------------------------------


class FitError(AbnError):
    """Base class for node-model fitting failures."""


class NoObservations(FitError):
    """Empty design matrix."""


class NonFiniteData(FitError):
    """Design or response contains NaN/inf."""


class AllPredictorsDropped(FitError):
    """Rank pruning removed every predictor (intercept-only fallback)."""


class NonPositiveDefiniteHessian(FitError):
    """Negative Hessian at the reported optimum is not SPD."""


class RangeTooNarrow(FitError):
    """Marginal-density grid does not cover the posterior mass."""


# --- cache / search -----------------------------------------------------


class RetainedExceedsLimit(ConstraintError):
    """A node's retained parents exceed its max-parent limit."""


class UnenumeratedParentSet(AbnError):
    """Cache lookup of a parent set that was never enumerated."""


class CacheMismatch(AbnError):
    """Score cache fingerprint does not match the dataset in use."""


class MemoryLimit(AbnError):
    """Exact-search tables would exceed the configured memory budget."""


class EmptyCache(AbnError):
    """Heuristic search received a cache with no entries."""


class PoissonOverflow(AbnError):
    """Simulated poisson mean exceeds the overflow guard."""


class ConfigError(AbnError):
    """Inconsistent or unreadable run configuration."""
