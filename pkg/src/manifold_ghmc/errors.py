"""Exception types shared across the library."""


class ManifoldGHMCError(Exception):
    """Base class for all library errors."""


class SingularGram(ManifoldGHMCError):
    """The Gram matrix (or an OU/RATTLE multiplier system) is numerically singular."""


class InvalidParams(ManifoldGHMCError):
    """Model or configuration parameters are out of their valid range."""


class OffManifold(ManifoldGHMCError):
    """A position violates the constraint beyond the allowed tolerance."""


class RejectionBudgetExceeded(ManifoldGHMCError):
    """Truncated-Gaussian rejection sampling exhausted its trial budget."""


class ChainAbort(ManifoldGHMCError):
    """A Markov chain hit an unrecoverable condition (e.g. singular Gram matrix)."""
