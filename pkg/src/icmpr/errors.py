"""Exception hierarchy shared across the package."""


class IcmprError(Exception):
    """Base class for all package errors."""


class SpecError(IcmprError, ValueError):
    """A model specification is inconsistent with its model type or the data."""


class InvalidParameterError(IcmprError, ValueError):
    """A linear predictor or derived parameter is not finite."""


class DomainError(IcmprError, ValueError):
    """A function was evaluated outside its domain (e.g. hazard at t <= 0)."""


class DataError(IcmprError, ValueError):
    """Input data could not be parsed or violates dataset invariants.

    ``row`` and ``column`` identify the offending cell when known.
    """

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class NonIdentifiableError(IcmprError):
    """The data carry no information about the event time (e.g. all right-censored)."""


class InvalidCovarianceError(IcmprError):
    """A covariance matrix is missing or not positive definite."""
