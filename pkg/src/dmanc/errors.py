"""Exception hierarchy shared across the package."""


class DmancError(Exception):
    """Base class for every error raised by this package."""


class NumericFaultError(DmancError, ArithmeticError):
    """A non-finite value entered a filter or adaptive update."""


class DimensionError(DmancError, ValueError):
    """Array shapes or counts do not agree."""


class ParameterError(DmancError, ValueError):
    """A scalar parameter is out of its admissible range."""


class EndOfStream(DmancError):
    """A non-looping file source ran out of samples."""


class RecipeError(DmancError, ValueError):
    """A scene recipe cannot produce paths of the requested length."""


class FormatError(DmancError, ValueError):
    """A path file is malformed or truncated."""


class TrainingDivergedError(DmancError):
    """Offline compensation training blew up.

    Attributes
    ----------
    iteration : int
        Sample index at which divergence was detected.
    pair : tuple of int or None
        ``(m, k)`` pair being trained, when known.
    """

    def __init__(self, iteration, pair=None, message=None):
        self.iteration = iteration
        self.pair = pair
        if message is None:
            where = f" for pair {pair}" if pair is not None else ""
            message = f"compensation training diverged{where} at iteration {iteration}"
        super().__init__(message)


class DivergedError(DmancError):
    """A control filter exceeded the divergence ceiling."""

    def __init__(self, iteration, node=None):
        self.iteration = iteration
        self.node = node
        where = f" at node {node}" if node is not None else ""
        super().__init__(f"control filter diverged{where} at iteration {iteration}")


class TopologyError(DmancError, ValueError):
    """Diffusion combination weights are not a valid row-stochastic matrix."""


class UndefinedReferenceError(DmancError, ValueError):
    """NSE requested over a window where the disturbance has zero power."""


class ConditioningError(DmancError, ArithmeticError):
    """A normal-equation system stayed singular after diagonal loading."""

    def __init__(self, cond, message=None):
        self.cond = cond
        super().__init__(message or f"normal equations singular (condition estimate {cond:.3e})")


class DegenerateSpectrumError(DmancError, ValueError):
    """All correlation eigenvalues vanished, so no step-size bound exists."""


class CapabilityError(DmancError, ValueError):
    """A request lies outside what the chosen numerical method supports."""


class ConfigError(DmancError, ValueError):
    """A scenario configuration failed validation."""


class ComparisonError(DmancError, ValueError):
    """Run records cannot be compared (different shapes or scenes)."""
