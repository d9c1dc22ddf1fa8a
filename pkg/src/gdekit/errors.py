"""Exception and warning types shared across the package."""


class GdekitError(Exception):
    """Base class for all errors raised by gdekit."""


class NormalizationError(GdekitError):
    """A probability vector or weight vector deviates from sum 1 beyond tolerance."""


class RangeError(GdekitError):
    """A probability entry lies outside [0, 1] beyond tolerance."""


class AlignmentError(GdekitError):
    """Point ids of two aligned inputs do not match."""


class SizeError(GdekitError):
    """An input has too few points, models, or entries for the operation."""


class DegenerateError(GdekitError):
    """A statistic is undefined for the given input (e.g. constant series)."""


class ConstructionError(GdekitError):
    """A randomized population construction failed within its retry budget."""


class ConstraintError(GdekitError):
    """Explicit parameters violate a required linear constraint."""


class KappaRangeError(GdekitError):
    """A disagreement/test-error ratio exceeds 1, signalling corrupted input."""


class ParseError(GdekitError):
    """A file could not be parsed; carries path and line context."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


class DuplicateIdError(ParseError):
    """A point id (or point/model cell) occurs more than once."""


class ClassRangeError(GdekitError):
    """A class index is outside [0, n_classes - 1]."""


class SchemaError(GdekitError):
    """A JSON document does not match the expected schema."""


class IoError(GdekitError):
    """An export or import failed (missing file, empty input, ...)."""


class ConvergenceWarning(UserWarning):
    """A trained model did not reach the near-interpolation threshold."""
