"""
Exception hierarchy shared by every module of the verifier.

Computational functions raise these; verification functions turn failed
properties into failing report records instead.
"""


class FreeFieldError(Exception):
    """Base class for all free-field errors."""


class InvalidSpec(FreeFieldError):
    """The requested discretization is unusable."""


class SiteOutOfBounds(FreeFieldError):
    """A site index lies outside the lattice."""


class OutOfBounds(FreeFieldError):
    """Region or slab parameters leave the lattice."""


class EmptyRegion(FreeFieldError):
    """A region construction produced no sites."""


class LengthMismatch(FreeFieldError):
    """Two field configurations have different lengths."""


class KindMismatch(FreeFieldError):
    """A propagator kernel of the wrong kind was supplied."""


class ModeSingular(FreeFieldError):
    """A spatial mode has a non-real or vanishing frequency."""


class SupportViolation(FreeFieldError):
    """A test function or observable leaves its permitted support."""


class TruncationOverflow(FreeFieldError):
    """A product exceeds the configured symmetric or exterior degree."""


class NotContained(FreeFieldError):
    """An observable does not fit into the target region."""


class NotDisjoint(FreeFieldError):
    """Regions that must be disjoint overlap."""


class PreconditionViolated(FreeFieldError):
    """A verification scenario does not satisfy its geometric precondition."""


class BadOrdering(FreeFieldError):
    """Cutoff surfaces are not strictly ordered inside their region."""


class SizeCap(FreeFieldError):
    """A linear-algebra block exceeds the configured size cap."""


class UnknownReference(FreeFieldError):
    """A dump request names an object that cannot be constructed."""


class ConfigError(FreeFieldError):
    """Base class for configuration problems."""


class ParseError(ConfigError):
    """The configuration source could not be read or decoded."""


class ValidationError(ConfigError):
    """A configuration value is invalid."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path
        self.message = message
