"""Exception hierarchy shared by all histmerge modules."""


class HistmergeError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(HistmergeError, ValueError):
    """An operator fails one of its invariants (Hermiticity, trace, ...)."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SelectorError(HistmergeError, IndexError):
    """A chain selector does not fit the family it is applied to."""


class ZeroBranchError(HistmergeError):
    """The requested branch has probability at or below ``P_MIN``."""

    def __init__(self, message, probability=0.0):
        super().__init__(message)
        self.probability = probability


class CapacityError(HistmergeError):
    """An enumeration or bundle would exceed its configured cap."""


class DoubleEraseError(HistmergeError):
    """The records of a slot were already destroyed."""


class SchemaError(HistmergeError, ValueError):
    """A JSON document does not follow the expected schema.

    ``field`` names the offending location, e.g. ``slots[2].time``.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
