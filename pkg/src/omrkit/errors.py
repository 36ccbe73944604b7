"""Exception hierarchy for omrkit.

Two broad families matter for the CLI exit-code mapping: format errors
(broken files, bad schemas) and contract errors (data that violates a
documented invariant or operation precondition).
"""


class OmrkitError(Exception):
    """Base class for all omrkit exceptions."""


class SchemaError(OmrkitError):
    """A structured document is not valid (missing field, wrong type)."""


class MapFormatError(OmrkitError):
    """A binary map bundle has a bad magic, header, or payload size."""


class ContractError(OmrkitError):
    """Base class for invariant and precondition violations."""


class ValidationError(ContractError):
    """Data violates a documented invariant."""


class MalformedLabel(ValidationError):
    """A label string does not match the annotation grammar."""


class MissingImage(ContractError):
    """A page image is required but not available."""


class EmptyBank(ContractError):
    """No rare class has any extractable instance."""


class DoesNotFit(ContractError):
    """A layout cannot be realized on the given page."""


class EmptyStats(ContractError):
    """A statistic was requested over zero annotations."""


class MissingCacheEntry(ContractError):
    """A class has no cached box size but one is required."""


class NoMatches(ContractError):
    """No detection matched any ground-truth box."""


class DegenerateImage(ContractError):
    """An image has zero intensity variance and cannot be registered."""


class NoOverlap(ContractError):
    """No candidate transform produced a usable overlap region."""


class UnknownClass(ContractError):
    """An annotation references a class missing from the registry."""
