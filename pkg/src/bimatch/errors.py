"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class BimatchError(Exception):
    exit_code = 1


class ConfigError(BimatchError, ValueError):
    """Bad configuration, input file or model parameterization."""

    exit_code = 2


class GeometryError(ConfigError):
    """Nonpositive distances or malformed coordinates."""


class ParameterizationError(ConfigError):
    """Economic parameters that break a model assumption."""


class UsageError(ConfigError):
    """An operation was called on an object it does not apply to."""


class NumericError(BimatchError, ArithmeticError):
    """A solver failed to converge or to bracket a root."""

    exit_code = 3


class InvariantError(BimatchError, RuntimeError):
    """A model invariant was violated; indicates a bug, not bad input."""

    exit_code = 4


class StateError(InvariantError):
    """Unreachable sub-process state."""


class ActionError(InvariantError):
    """Inadmissible action for the given state."""
