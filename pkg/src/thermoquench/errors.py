"""Exception hierarchy. The CLI maps these onto exit codes."""


class ThermoQuenchError(Exception):
    """Base class for all package errors."""


class ConfigError(ThermoQuenchError, ValueError):
    """Invalid parameters or configuration (exit code 2)."""


class CapacityError(ThermoQuenchError):
    """Problem size exceeds a dense-method guard (exit code 3)."""


class NumericalError(ThermoQuenchError):
    """A numerical stage failed (exit code 4)."""


class PropagationError(NumericalError):
    pass


class SamplingError(NumericalError):
    pass


class ConsistencyError(NumericalError):
    pass
