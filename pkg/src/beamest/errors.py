"""Exception types raised across the package."""


class BeamEstError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(BeamEstError, ValueError):
    pass


class RankDeficient(BeamEstError, ArithmeticError):
    pass


class InvalidParams(BeamEstError, ValueError):
    pass


class IndexOutOfRange(BeamEstError, IndexError):
    pass


class ZeroChannel(BeamEstError, ValueError):
    pass


class ZeroReference(BeamEstError, ValueError):
    pass


class SupportTooLarge(BeamEstError, ValueError):
    pass


class InvalidBlockShape(BeamEstError, ValueError):
    pass


class ConfigError(BeamEstError, ValueError):
    """Bad experiment configuration.

    ``key`` names the offending key and ``line`` the 1-based line in the
    config file, when known.
    """

    def __init__(self, key, message, line=None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{key}{where}: {message}")
