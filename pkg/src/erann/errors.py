"""Exception hierarchy shared by every erann module."""


class ErannError(Exception):
    """Base class for all errors raised by this package."""


class InvalidAudio(ErannError):
    pass


class InvalidConfig(ErannError):
    pass


class InvalidInput(ErannError):
    pass


class InvalidShape(ErannError):
    pass


class InternalError(ErannError):
    pass


class IncompatibleCheckpoint(ErannError):
    pass


class CorruptCheckpoint(ErannError):
    pass


class InvalidPlan(ErannError):
    pass


class ManifestError(ErannError):
    pass


class UnsupportedFormat(InvalidAudio):
    """WAV file uses a codec other than PCM16 / float32."""


class NumericFailure(ErannError):
    """Training produced a non-finite loss."""


class CorruptCache(ErannError):
    """Cached feature file is malformed or was computed with other settings."""
