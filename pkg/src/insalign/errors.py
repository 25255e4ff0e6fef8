"""Exception hierarchy.

Every solver failure derives from :class:`AlignmentError`. Subclasses of
:class:`DegeneracyError` flag inputs whose geometry makes the requested
quantity non-unique; the CLI maps them to exit code 3.
"""


class AlignmentError(Exception):
    """Base class for all package errors."""


class DegeneracyError(AlignmentError):
    """The input geometry does not determine the requested quantity uniquely."""


class InconsistentInputError(AlignmentError):
    """The inputs contradict the model they are supposed to satisfy."""


# attitude core
class DegenerateDirections(DegeneracyError):
    pass


class Inconsistent(InconsistentInputError):
    pass


class ConstantDirection(DegeneracyError):
    pass


class NormInfeasible(InconsistentInputError):
    pass


class NotPerpendicular(InconsistentInputError):
    pass


# scenario simulation
class SimulationError(AlignmentError):
    pass


class OutsideRotation(SimulationError):
    pass


class SegmentTooShort(SimulationError):
    pass


# ideal observers
class CoplanarPositions(DegeneracyError):
    pass


class SingularGram(DegeneracyError):
    pass


class VanishingFdot(DegeneracyError):
    pass


class InconsistentSegment(InconsistentInputError):
    pass


class NoFeasiblePair(InconsistentInputError):
    pass


class IllConditionedGram(DegeneracyError):
    pass


class DependentAxes(DegeneracyError):
    pass


class ParallelFdot(DegeneracyError):
    pass


# configuration
class ConfigError(AlignmentError):
    """Raised for unreadable or invalid experiment configuration."""


class SchemaError(ConfigError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ValidationError(ConfigError):
    pass
