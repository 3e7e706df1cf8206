"""Exception hierarchy shared across the package."""


class RefineryError(Exception):
    """Base class for all package errors."""


class DomainError(RefineryError):
    """A value falls outside its dimension's declared domain."""


class ConfigError(RefineryError):
    """Invalid dimension/hierarchy configuration (e.g. non-divisible domain)."""


class IngestError(RefineryError):
    """Malformed or out-of-domain input data; carries a row/column location."""


class AlignmentError(RefineryError):
    """A predicate cannot be mapped onto the requested (coarser) level."""


class QueryError(RefineryError):
    """Malformed query request (unknown dimension, bad group level, ...)."""


class ManifestError(RefineryError):
    """A dataset manifest is missing, inconsistent, or tampered with."""
