"""Exception types shared across the pipeline."""


class PointillistError(Exception):
    """Base class for all pipeline errors."""


class DegenerateTriangle(PointillistError):
    """Triangle area below the numerical floor; no stable frame exists."""


class TokenOutOfRange(PointillistError):
    """Token id falls outside the class expected by the operation."""


class BindingOutOfRange(PointillistError):
    """Face binding index is not representable in the vocabulary."""


class GrammarViolation(PointillistError):
    """Token sequence breaks the framing/group grammar (strict decode)."""

    def __init__(self, message, position=None, expected=None):
        super().__init__(message)
        self.position = position
        self.expected = expected


class BadImageShape(PointillistError):
    """Image dimensions incompatible with the patch grid."""


class TooFewPoints(PointillistError):
    """Point set smaller than the encoder's minimum."""


class ContextOverflow(PointillistError):
    """Token prefix longer than the model's context window."""


class LengthMismatch(PointillistError):
    """Aligned inputs disagree on element count."""


class ShapeMismatch(PointillistError):
    """Arrays expected to share a shape do not."""


class ImageTooSmall(PointillistError):
    """Image smaller than the metric's window."""


class ConfigError(PointillistError):
    """Run configuration failed validation."""
