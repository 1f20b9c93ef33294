"""Exception hierarchy shared by every module."""


class HGLError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(HGLError, ValueError):
    pass


class ParseError(HGLError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class ConfigError(HGLError, ValueError):
    pass


class EstimationError(HGLError, ValueError):
    pass


class NumericError(HGLError, FloatingPointError):
    pass


class UsageError(HGLError, RuntimeError):
    pass


class UndefinedMetricError(HGLError, ValueError):
    pass
