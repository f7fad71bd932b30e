"""Exception hierarchy shared by all modules."""


class RelBoltzError(Exception):
    """Base class for all package errors."""


class EvaluationError(RelBoltzError, ValueError):
    pass


class ChartError(RelBoltzError, ValueError):
    """A point lies outside the declared coordinate box."""


class SingularMetricError(RelBoltzError, ValueError):
    pass


class ZeroVectorError(RelBoltzError, ValueError):
    pass


class IntegrationError(RelBoltzError, RuntimeError):
    pass


class ChartExitError(RelBoltzError, RuntimeError):
    """Backward path left the chart before the exit time was resolved.

    ``partial`` holds the largest backward parameter known to be inside the box.
    """

    def __init__(self, message, partial=0.0):
        super().__init__(message)
        self.partial = partial


class NoConnection(RelBoltzError, RuntimeError):
    pass


class DegenerateTargetError(RelBoltzError, ValueError):
    pass


class DegenerateInput(RelBoltzError, ValueError):
    pass


class TransversalityError(RelBoltzError, RuntimeError):
    pass


class MollificationError(RelBoltzError, ValueError):
    pass


class SourcePatchError(RelBoltzError, ValueError):
    pass


class KernelParamError(RelBoltzError, ValueError):
    pass


class NoContractionError(RelBoltzError, RuntimeError):
    pass


class TangencyError(RelBoltzError, RuntimeError):
    pass


class DomainError(RelBoltzError, ValueError):
    pass


class CausticError(RelBoltzError, RuntimeError):
    pass


class EmptyDetection(RelBoltzError, RuntimeError):
    pass


class ConfigError(RelBoltzError, ValueError):
    """Scenario configuration is invalid; ``pointer`` is a JSON pointer to the offending field."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
