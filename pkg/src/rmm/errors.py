"""Exception hierarchy shared across the toolkit.

Every error raised intentionally by this package derives from
:class:`ToolkitError`, so callers (in particular the command line
interface) can distinguish expected failures from genuine bugs.
"""


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(ToolkitError, ValueError):
    """An argument violates a documented precondition."""


class UnsupportedReservoirError(ToolkitError):
    """The operation requires a reservoir kind it did not receive."""


class SingularSystemError(ToolkitError):
    """A linear system was too ill-conditioned to solve reliably."""


class SolverFailureError(ToolkitError):
    """An iterative or LP solver did not reach a usable solution."""


class MetricUndeterminedError(ToolkitError):
    """No read events were available to fit the association metric."""


class FormatError(ToolkitError):
    """A file or serialized blob does not match the expected format."""
