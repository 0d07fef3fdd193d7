"""Exception hierarchy.

Configuration and I/O problems derive from :class:`ConfigError`; everything
that goes wrong in the numerics derives from :class:`DomainError`.  The CLI
maps the two families onto exit codes 2 and 1.
"""


class GmpeError(Exception):
    """Base class for all package errors."""


class ConfigError(GmpeError):
    """Bad configuration, missing columns, unreadable input."""


class FlatfileParseError(ConfigError):
    """Structurally malformed CSV."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class DomainError(GmpeError, ValueError):
    """Input outside the mathematical domain of an operation."""


class DegenerateColumnError(DomainError):
    def __init__(self, term):
        self.term = term
        super().__init__(f"degenerate design column for term {term!s}")


class RankDeficiencyError(DomainError):
    pass


class EmptyModelError(DomainError):
    def __init__(self, delta):
        self.delta = delta
        super().__init__(f"threshold delta={delta!r} removed every term")


class NoKneeError(DomainError):
    pass


class EstimationError(DomainError):
    pass
