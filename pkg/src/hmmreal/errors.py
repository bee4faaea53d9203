"""Exception hierarchy shared across the package.

Two broad families matter to callers: :class:`RealizationError` subclasses
signal that an algorithm's rank/uniqueness conditions failed on the given
input (CLI exit code 2), while :class:`CapacityError` and plain
``ValueError`` signal invalid or oversized input (CLI exit code 3).
"""


class RealizationError(Exception):
    """Base class for algorithmic failures (rank / uniqueness conditions)."""


class DegeneracyError(RealizationError):
    """A uniqueness assumption failed: non-unique stationary distribution,
    colliding eigenvalues, or a joint diagonalization that does not exist."""


class PositivityError(RealizationError):
    """A stationary distribution entry is not strictly positive."""


class RankDeficiencyError(RealizationError):
    """A matrix that must have full column rank does not (window too small)."""


class ConditionError(RealizationError):
    """A decomposition's operating condition failed; carries a hint which
    backend (if any) may still apply."""


class SplitError(RealizationError):
    """A Khatri-Rao column failed to split into a rank-one product."""


class RealizationFailure(RealizationError):
    """Every available backend failed; carries the per-backend diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CapacityError(Exception):
    """A dense table of d**N entries would exceed the configured budget."""

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required
