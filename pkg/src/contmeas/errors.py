"""Exception hierarchy shared by the library and the CLI."""


class ContmeasError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class InputError(ContmeasError, ValueError):
    """Malformed or inconsistent user input."""


class DomainError(InputError):
    """A scalar function was evaluated outside its domain."""


class RangeError(InputError):
    """A schedule was evaluated outside its configured interval."""


class NumericalError(ContmeasError, ArithmeticError):
    """A linear-algebra routine failed or lost too much accuracy."""


class ClassificationError(NumericalError):
    """A block matched no row of the Jordan representation table."""


class ResourceLimitError(ContmeasError):
    """A configured cap (branches, nodes, path length) was exceeded.

    ``partial`` carries whatever was computed before the cap was hit.
    """

    exit_code = 2

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = [] if partial is None else list(partial)


class SimulationError(ContmeasError):
    exit_code = 3


class ConsistencyError(SimulationError):
    """Two computations that must agree did not."""


class NormalizationError(SimulationError):
    """Endpoint operators could not be rescaled into a complete pair."""


class DriftError(SimulationError):
    """Integrated controls left the constraint surface."""

    def __init__(self, message, x=None):
        super().__init__(message)
        self.x = x


class SingularityError(SimulationError):
    """Integrated controls blew up before the end of the interval."""

    def __init__(self, message, x=None):
        super().__init__(message)
        self.x = x


class SaturationError(ContmeasError):
    """A target eigenvalue needs a center beyond the saturation cap."""

    exit_code = 4
