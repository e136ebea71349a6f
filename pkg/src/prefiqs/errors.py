"""Exception and warning types raised across the package."""


class PrefiqsError(Exception):
    """Base class for every domain error raised by prefiqs."""


class ShapeMismatch(PrefiqsError, ValueError):
    pass


class NonIntegralOutputSize(PrefiqsError, ValueError):
    pass


class ZeroNorm(PrefiqsError, ArithmeticError):
    """Raised when a vector is too close to zero to be normalized."""


class LengthMismatch(PrefiqsError, ValueError):
    pass


class DimensionMismatch(PrefiqsError, ValueError):
    pass


# serialization
class FormatError(PrefiqsError, ValueError):
    pass


class BadMagic(FormatError):
    pass


class VersionUnsupported(FormatError):
    pass


class Truncated(FormatError):
    pass


class ManifestInvalid(FormatError):
    pass


# pruning
class RhoOutOfRange(PrefiqsError, ValueError):
    pass


class UnsupportedTopology(PrefiqsError, ValueError):
    pass


# scoring / jvp
class DriftOutOfRange(PrefiqsError, ValueError):
    pass


class StepTooLarge(PrefiqsError, ValueError):
    pass


class EmptySampleSet(PrefiqsError, ValueError):
    pass


# evaluation
class EmptyGenuine(PrefiqsError, ValueError):
    pass


class EmptyScores(PrefiqsError, ValueError):
    pass


class MissingQuality(PrefiqsError, KeyError):
    pass


class MissingEmbedding(PrefiqsError, KeyError):
    pass


class EmptyGrid(PrefiqsError, ValueError):
    pass


class GridTooShort(PrefiqsError, ValueError):
    pass


class InsufficientImpostors(UserWarning):
    """Too few impostor scores to realise the requested FMR; threshold is +inf."""


# synthlab
class ConfigInvalid(PrefiqsError, ValueError):
    pass


class UnsupportedArch(PrefiqsError, ValueError):
    pass


class NonFiniteLoss(PrefiqsError, ArithmeticError):
    pass
