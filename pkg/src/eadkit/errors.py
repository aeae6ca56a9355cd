"""Exception hierarchy shared by the toolkit."""


class EadError(Exception):
    """Base class for every error raised by eadkit."""


class StructuralError(EadError, ValueError):
    """A value does not have the shape or fields an operation needs."""


class SeriesTooShortError(StructuralError):
    """A time series is too short for the requested computation."""


class DataFormatError(EadError, ValueError):
    """A file on disk is malformed."""


class CorrectionError(EadError, ValueError):
    """Auto-correction could not produce a feasible energy vector."""


class FieldParseError(EadError, ValueError):
    """A run of recognized digits could not be assembled into a number."""

    def __init__(self, field, positions, reason):
        self.field = field
        self.positions = list(positions)
        self.reason = reason
        super().__init__(f"field {field!r} at digit positions {self.positions}: {reason}")
