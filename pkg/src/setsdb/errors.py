"""Exception taxonomy shared by every layer of the package.

All failures raised on purpose derive from :class:`Error`, so callers (and
the CLI) can distinguish user-facing errors from genuine bugs.
"""


class Error(Exception):
    """Base class for all errors raised by this package."""


# -- storage ----------------------------------------------------------------

class InvalidName(Error):
    """A database, metric, tag, or label is empty or contains reserved characters."""


class DuplicateDatabase(Error):
    pass


class UnknownDatabase(Error):
    pass


class UnknownSeries(Error):
    pass


class KindMismatch(Error):
    """Numeric and symbolic-state samples were mixed in one stream or operation."""


# -- ontology documents ------------------------------------------------------

class SchemaError(Error):
    """A document does not match its expected shape or violates a load invariant."""


class CycleError(Error):
    """A relation that must be acyclic (hierarchy, definition, provenance) has a cycle."""


class DanglingReference(Error):
    """A document references a concept, metric, unit, dimension, or entity that is not declared."""


class UnknownMetric(Error):
    pass


class UnknownEntity(Error):
    pass


class UnknownUnit(Error):
    pass


class UnitMismatch(Error):
    """Units belong to different dimensions, or no conversion factor is available."""


# -- expression language ------------------------------------------------------

class ExpressionParseError(Error):
    """Raised with the character offset at which parsing failed."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (position {position})")
        self.message = message
        self.position = position


class UnboundMetric(Error):
    pass


class DivisionByZero(Error):
    pass


class UnsupportedHere(Error):
    """The construct is valid in a definition but not directly evaluable in this context."""


# -- stream semantics and provenance ------------------------------------------

class UnknownStream(Error):
    pass


class DuplicateStream(Error):
    pass


class UnresolvedReference(Error):
    """Stream semantics reference a metric, entity, unit, or sensor that does not resolve."""


# -- query planning ------------------------------------------------------------

class Underivable(Error):
    """No reasoning rule produces the requested data stream."""


class NoUsableAttributes(Error):
    """A similarity request has no present attribute with a positive weight."""


class QueryParseError(Error):
    """Raised with the character offset at which query parsing failed."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (position {position})")
        self.message = message
        self.position = position
