"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: configuration problems exit 1,
data/schema problems exit 2, embedding-provider problems exit 3.
"""

from __future__ import annotations


class OvodaError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(OvodaError):
    """Invalid run configuration or unsatisfiable generator settings."""

    exit_code = 1


class DataError(OvodaError):
    """Invalid input data (schema or invariant violations)."""

    exit_code = 2


class SchemaError(DataError):
    """A field is missing or has the wrong type; carries a JSON-pointer-ish path."""

    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        super().__init__(f"{pointer}: {message}")


class ValidationError(DataError):
    """Structurally well-formed data violating a documented invariant."""


class ProviderError(OvodaError):
    """Embedding provider failure (transport or backend)."""

    exit_code = 3

    def __init__(self, message: str, retryable: bool = False):
        self.retryable = retryable
        super().__init__(message)


class CoincidentCenters(OvodaError):
    """Spatial relation is undefined for boxes sharing a BEV center."""


class EmptyEvidence(OvodaError):
    """No image or point evidence available to fuse for a proposal."""


class DimensionMismatch(OvodaError):
    """Vector/matrix dimensions disagree."""


class ShapeMismatch(OvodaError):
    """Feature batch shapes disagree."""


class VocabMismatch(OvodaError):
    """Two distributions are indexed by different vocabulary lists."""


class IncompatibleAttribute(OvodaError):
    """Attribute is not allowed for the class per the compatibility map."""


class OutOfOrderFrame(OvodaError):
    """Frames must be pushed in strictly increasing timestamp order."""


class EmptyNovelSet(OvodaError):
    """Novel-class AP is undefined over an empty class set."""


class NonFiniteGradient(OvodaError):
    """Gradient check encountered NaN or infinity."""
