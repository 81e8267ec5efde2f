"""Exception hierarchy shared by every rrnet module."""


class RRNetError(Exception):
    """Base class for all errors raised by rrnet."""


class ShapeError(RRNetError, ValueError):
    """A tensor shape violates an operator precondition.

    ``axis`` names the offending dimension (``"c"``, ``"h"``, ...) when one
    can be singled out.
    """

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class ConfigError(RRNetError, ValueError):
    """A network configuration could not be parsed or is semantically invalid."""

    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key}")
        full = f"{message} ({', '.join(where)})" if where else message
        super().__init__(full)
        self.line = line
        self.key = key


class FormatError(RRNetError, ValueError):
    """A binary file (RRTN, RRWT, PGM/PPM) is malformed or unsupported."""


class NumericError(RRNetError, ArithmeticError):
    """A numeric precondition failed (empty masks, log of non-positive values)."""
