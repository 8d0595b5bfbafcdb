"""Exception types shared across the package."""


class VocabLifecycleError(Exception):
    """Base class for all domain errors raised by this package."""


class ValidationError(VocabLifecycleError):
    """Input or artifact violates a documented contract."""
