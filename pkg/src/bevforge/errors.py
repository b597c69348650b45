"""Exception types raised across the package."""


class BevForgeError(Exception):
    """Base class for every error raised by bevforge."""


class NonPositiveDepth(BevForgeError, ValueError):
    pass


class ShapeMismatch(BevForgeError, ValueError):
    pass


class LatticeMismatch(BevForgeError, ValueError):
    pass


class EmptyTarget(BevForgeError, ValueError):
    """Every cell of a target map carries the ignore label."""


class IndexOutOfWindow(BevForgeError, IndexError):
    pass


class EmptyWindow(BevForgeError, ValueError):
    pass


class Degenerate(BevForgeError, ValueError):
    """Too few points to fit a conic."""


# -- file formats ---------------------------------------------------------

class FormatError(BevForgeError):
    """Malformed on-disk data."""


class BadMagic(FormatError):
    pass


class UnsupportedDtype(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class BadHeader(FormatError):
    pass


class BadMaxval(FormatError):
    pass


class MalformedLine(FormatError):
    pass


class NonRigidRotation(FormatError):
    pass


class ConfigError(BevForgeError):
    pass


class UnknownKey(ConfigError):
    pass


class OutOfRange(ConfigError):
    pass
