"""Exception hierarchy shared by every module."""


class SpoofbenchError(Exception):
    """Base class for all library errors."""


class InvalidArgument(SpoofbenchError, ValueError):
    pass


class ShapeError(SpoofbenchError, ValueError):
    pass


class UnsupportedFormat(SpoofbenchError, ValueError):
    pass


class DegenerateLabels(SpoofbenchError, ValueError):
    """Raised when an operation needs both classes but sees only one."""


class ManifestIntegrityError(SpoofbenchError, ValueError):
    pass


class ManifestParseError(SpoofbenchError, ValueError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class ConfigError(SpoofbenchError, ValueError):
    pass
