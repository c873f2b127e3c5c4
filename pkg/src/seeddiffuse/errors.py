"""Exception hierarchy shared across the pipeline."""


class SeedDiffuseError(Exception):
    pass


class FormatError(SeedDiffuseError, ValueError):
    """A file on disk does not match the expected container format."""


class BadMagic(FormatError):
    pass


class DimensionOverflow(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class ValueOutOfRange(FormatError):
    pass


class NonIndexedImage(FormatError):
    pass


class IndexOutOfTable(FormatError):
    pass


class ClassTableError(FormatError):
    pass


class ConfigError(SeedDiffuseError, ValueError):
    pass


class DimensionMismatch(SeedDiffuseError, ValueError):
    pass


class DoubleNormalize(SeedDiffuseError, ValueError):
    pass


class KTooLarge(SeedDiffuseError, ValueError):
    pass


class NonPositiveSigma(SeedDiffuseError, ValueError):
    pass


class NoPositiveSeeds(SeedDiffuseError, ValueError):
    pass


class TooLarge(SeedDiffuseError, ValueError):
    pass


class LengthMismatch(SeedDiffuseError, ValueError):
    pass


class LabelOutOfRange(SeedDiffuseError, ValueError):
    pass


class NoPresentClasses(SeedDiffuseError, ValueError):
    pass


class NoSeedsForClass(SeedDiffuseError):
    def __init__(self, class_index):
        super().__init__(f"no seed superpixels for class {class_index}")
        self.class_index = class_index


class NonConvergence(SeedDiffuseError):
    """Solver stopped at ``max_iters`` above tolerance.

    The partially converged result is kept on ``field`` (single solve) or
    ``fields`` (multi-class solve) so callers can still use it.
    """

    def __init__(self, message, field=None, fields=None):
        super().__init__(message)
        self.field = field
        self.fields = fields
