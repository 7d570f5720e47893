"""Exception hierarchy shared by all modules."""


class VPharmError(Exception):
    """Base class for every error raised by this package."""


class InvalidSample(VPharmError, ValueError):
    """Weighted sample is empty, unnormalized, or contains non-finite data."""


class InvalidExponent(VPharmError, ValueError):
    pass


class NonConvergence(VPharmError, RuntimeError):
    """A root finder exhausted its iteration budget."""

    def __init__(self, message, location=None):
        super().__init__(message if location is None else f"{message} at {location}")
        self.location = location


class OutsideDomain(VPharmError, ValueError):
    pass


class UnsupportedDimension(VPharmError, ValueError):
    pass


class GridMismatch(VPharmError, ValueError):
    pass


class VanishingGradient(VPharmError, ValueError):
    pass


class ZeroRadius(VPharmError, ValueError):
    pass


class ConfigError(VPharmError, ValueError):
    pass


class NotConverged(VPharmError, RuntimeError):
    """Perron iteration hit ``max_iters``; the partial report is attached."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NoExteriorSphere(VPharmError, ValueError):
    pass


class UnsupportedP(VPharmError, ValueError):
    pass


class PreconditionFailed(VPharmError, ValueError):
    pass
