"""Exception hierarchy shared by all modules."""


class KmtpeError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(KmtpeError, ValueError):
    """Invalid search-space, hardware or run configuration."""


class InputError(KmtpeError, ValueError):
    """Malformed operands or data passed to an operation."""


class CapacityError(KmtpeError):
    """A request exceeds a fixed capacity (brute-force guard, DSP packing)."""


class NumericalError(KmtpeError, ArithmeticError):
    """A non-finite value showed up where a finite one is required."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class IntegrityError(KmtpeError):
    """A persisted state file failed its checksum or schema check."""
