"""Exception hierarchy shared by every ovacnn module."""


class OvaCnnError(Exception):
    """Base class for all errors raised by ovacnn."""


class ShapeError(OvaCnnError, ValueError):
    """Tensor extents are invalid or incompatible."""


class StateError(OvaCnnError, RuntimeError):
    """An object is used before it holds the state the call needs."""


class DataError(OvaCnnError, ValueError):
    """Dataset contents violate a precondition (empty, bad label, ...)."""


class ConfigError(OvaCnnError, ValueError):
    """A configuration value is out of its permitted range."""


class NumericError(OvaCnnError, ArithmeticError):
    """A loss or gradient became non-finite."""


class FormatError(OvaCnnError, ValueError):
    """A file on disk does not follow its declared format."""

    def __init__(self, message, *, path=None, offset=None, line=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.path = path
        self.offset = offset
        self.line = line
