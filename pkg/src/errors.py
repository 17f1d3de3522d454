"""
GSCodec - Errors
================
Exception hierarchy shared by every stage of the codec.
"""

from typing import Optional


class GSCodecError(Exception):
    """Base class for every error raised by the codec."""


class ConfigError(GSCodecError):
    """Bad or unknown configuration key/value."""


class ParameterError(GSCodecError, ValueError):
    """An argument is outside its documented range."""


# ---------------------------------------------------------------------------
# splat-model / PLY
# ---------------------------------------------------------------------------

class PlyParseError(GSCodecError):
    """
    PLY input could not be turned into a cloud.

    Args:
        message: Human readable reason
        offset: Byte offset in the input where the problem was detected
        prop: Offending property name, if any
    """

    def __init__(self, message: str, offset: int = 0, prop: Optional[str] = None):
        self.offset = offset
        self.prop = prop
        where = f"byte {offset}"
        if prop is not None:
            where += f", property '{prop}'"
        super().__init__(f"{message} ({where})")


class PlyHeaderError(PlyParseError):
    pass


class PlyTruncatedError(PlyParseError):
    pass


class PlyPropertyError(PlyParseError):
    pass


class EmptyCloudError(PlyParseError):
    def __init__(self, message: str = "cloud has no points", offset: int = 0):
        super().__init__(message, offset=offset)


class QuaternionError(GSCodecError):
    """A quaternion with zero norm cannot be normalised."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"zero-norm quaternion at index {index}")


# ---------------------------------------------------------------------------
# quantize
# ---------------------------------------------------------------------------

class DegenerateRangeError(GSCodecError):
    def __init__(self, attribute: str, value: float):
        self.attribute = attribute
        self.value = value
        super().__init__(
            f"attribute '{attribute}' is constant ({value!r}); "
            "store it as a raw-constant chunk instead of quantizing"
        )


class SymbolRangeError(GSCodecError, ValueError):
    """Symbol or codebook index outside its alphabet."""


# ---------------------------------------------------------------------------
# plas-map / entropy
# ---------------------------------------------------------------------------

class PlaneError(GSCodecError):
    """Grid, plane or PNG problem."""


class EntropyCodingError(GSCodecError):
    """Unencodable symbol or malformed ANS stream."""


# ---------------------------------------------------------------------------
# container
# ---------------------------------------------------------------------------

class ContainerError(GSCodecError):
    pass


class BadMagicError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


class TruncatedContainerError(ContainerError):
    pass


class ChecksumError(ContainerError):
    def __init__(self, chunk: str, expected: int, actual: int):
        self.chunk = chunk
        super().__init__(
            f"checksum mismatch in chunk '{chunk}': "
            f"expected {expected:08x}, got {actual:08x}"
        )


class InconsistentGofError(ContainerError):
    pass


class StageError(GSCodecError):
    """Failure inside an encode stage, tagged with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
