"""Exception hierarchy shared by every module."""


class FairPPOError(Exception):
    """Base class for all package errors."""


class ConfigError(FairPPOError, ValueError):
    """A configuration value is outside its allowed range."""


class ValidationError(FairPPOError, ValueError):
    """Inputs violate a documented precondition."""


class EmptyGroupError(ValidationError):
    """A group average was requested over an empty set of agents."""


class ShapeError(FairPPOError, ValueError):
    """Array dimensions do not match the declared architecture or batch."""


class NumericError(FairPPOError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class SequencingError(FairPPOError, RuntimeError):
    """A simulation decision was supplied out of order."""


class CheckpointError(FairPPOError, IOError):
    """A checkpoint container is malformed or incompatible."""
