"""Exception hierarchy shared by every senscap module."""


class SensCapError(Exception):
    """Base class for all errors raised by senscap."""


class ConfigError(SensCapError, ValueError):
    """Bad user input: malformed model file, invalid parameter, etc.

    ``field`` names the offending setting when known, so the CLI can report it.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


# types-core
class EmptyVector(ConfigError):
    pass


class OrderExceedsLength(ConfigError):
    pass


class LengthMismatch(ConfigError):
    pass


class NonExactType(ConfigError):
    pass


class InstanceTooLarge(ConfigError):
    pass


class InvalidType(ConfigError):
    """A histogram violates a simplex / exactness / shift-consistency invariant."""


# sensor-models
class OrderMismatch(ConfigError):
    pass


class InvalidProbability(ConfigError):
    pass


class NoMixture(ConfigError):
    pass


class AlphabetViolation(ConfigError):
    pass


class RangeExceedsField(ConfigError):
    pass


# capacity-bounds
class InfeasibleLambda(ConfigError):
    pass


class DimensionTooLarge(ConfigError):
    pass


class EmptyFeasibleSet(ConfigError):
    pass


class ConditionalUndefined(ConfigError):
    pass


class EvenReplication(ConfigError):
    pass


class SolverError(SensCapError, RuntimeError):
    """Numerical failure; ``diagnostics`` carries whatever the solver reported."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class InnerSolverDiverged(SolverError):
    pass


class NumericalUnderflow(SolverError):
    pass
