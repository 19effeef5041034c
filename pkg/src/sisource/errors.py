"""Exception hierarchy shared by the estimators and the CLI."""


class SourceLocError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 3


class ArgumentError(SourceLocError, ValueError):
    """An argument is outside the operation's precondition."""


class UnreachableError(SourceLocError):
    """An explicit node cannot be reached from the node in question."""


class StructureError(SourceLocError):
    """The graph does not have the shape the operation needs (e.g. not a tree)."""


class PathValidationError(SourceLocError, ValueError):
    """An infection path violates one of its structural invariants."""


class ScaleRefusal(SourceLocError):
    """An exhaustive oracle was asked to run beyond its guard."""

    exit_code = 4


class ConfigError(SourceLocError):
    """Malformed experiment configuration."""
