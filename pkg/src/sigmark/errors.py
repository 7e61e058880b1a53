"""Exception hierarchy shared across the package."""


class SigmarkError(Exception):
    """Base class for all package-specific errors."""


class EmptyGlyph(SigmarkError):
    """Preprocessing produced an empty foreground mask."""


class InsufficientKeypoints(SigmarkError):
    """Requested more control points than available keypoints."""


class DegenerateControlPoints(SigmarkError):
    """Control points are collinear; the TPS system is singular."""


class DegenerateBatch(SigmarkError):
    """No anchor in the batch has a positive example."""


class EmptyReference(SigmarkError):
    """Reference-style aggregation received no samples."""


class RenderDegenerate(SigmarkError):
    """Rendered sample fell outside the foreground-ratio band after retries."""


class InputShape(SigmarkError):
    """Tensor shape does not match the model contract."""


class ChecksumError(SigmarkError):
    """Payload CRC does not match the decoded fields."""

    def __init__(self, message, fields=None):
        super().__init__(message)
        self.fields = fields


class FieldOverflow(SigmarkError):
    """A payload field exceeds its bit-width."""


class UnknownSigner(SigmarkError):
    """Signer has no registered reference samples."""


class StoreError(SigmarkError):
    """Registry persistence failed (distinct from verification failure)."""


class ConfigError(SigmarkError):
    """Run configuration failed schema validation."""
