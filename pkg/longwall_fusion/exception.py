class FusionException(Exception):
    """Base longwall-fusion exception."""


class ConfigException(FusionException):
    """Config file missing, unparseable or out of range."""


class GeometryException(FusionException):
    pass


class FrameSequenceException(FusionException):
    pass


class InsufficientDataException(FusionException):
    pass


class SyncException(FusionException):
    pass


class InsufficientMotionException(SyncException):
    pass


class ImageException(FusionException):
    pass


class WireException(FusionException):
    """Base wire-format exception."""


class BadMagicException(WireException):
    pass


class UnsupportedVersionException(WireException):
    pass


class LengthMismatchException(WireException):
    def __init__(self, expected: int, actual: int) -> None:
        super().__init__(
            "length mismatch: expected {0} bytes, got {1}".format(
                expected, actual
            )
        )
        self.expected = expected
        self.actual = actual


class StorageException(FusionException):
    """Artifact store exception."""


class UndefinedReferenceException(FusionException):
    pass
