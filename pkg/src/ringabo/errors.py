"""Exception hierarchy shared by all modules."""


class RingABOError(Exception):
    """Base class for package errors."""


class InvalidParameterError(RingABOError, ValueError):
    """A physical or numerical parameter is outside its allowed range."""


class NumericalError(RingABOError, RuntimeError):
    """A numerical routine failed or produced non-finite output."""


class AccuracyError(NumericalError):
    """A truncation or discretisation is too coarse for the requested accuracy."""


class IntegratorError(NumericalError):
    """Time integration lost unitarity or hit a step it cannot resolve."""


class DetectionError(RingABOError):
    """Bloch-oscillation features could not be found in a trace."""


class DegenerateInputError(RingABOError, ValueError):
    """Inputs make an estimator singular (e.g. equal Bloch periods)."""
