"""Exception types used across the package.

Trial-level problems (a bad candidate crashing or overrunning its deadline)
are *statuses*, not exceptions; the classes here signal contract violations
and unusable inputs that the caller must fix.
"""


class RulkitError(Exception):
    """Base class for all package-specific errors."""


class ParseError(RulkitError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ShapeError(RulkitError):
    """Structurally inconsistent input (e.g. unit/RUL count mismatch)."""


class SchemaError(RulkitError):
    """Column-role mapping does not match the file."""


class DuplicateKeyError(RulkitError):
    """Duplicate (instance, timestep) row in a long-format file."""


class InsufficientDataError(RulkitError):
    """Not enough rows/instances for the requested operation."""


class ImputationError(RulkitError):
    """A channel has no observed values to impute from."""


class WindowError(RulkitError):
    """Series too short for the configured window length."""


class FitError(RulkitError):
    """A transform or model cannot be fitted on the given data."""


class DataError(RulkitError):
    """Non-finite or otherwise unusable numeric input."""


class ContractError(RulkitError):
    """Caller violated an interface contract (signature/schema mismatch)."""


class SamplingError(RulkitError):
    """Configuration sampling could not satisfy the space constraints."""


class SearchFailedError(RulkitError):
    """A search run produced zero successful trials; carries the history."""

    def __init__(self, message: str, history=None):
        self.history = history
        super().__init__(message)


class EnsembleError(RulkitError):
    """Ensemble construction or refit ended with no usable members."""
