"""Exception hierarchy shared by every module."""


class RteError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(RteError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(RteError, ValueError):
    """A precondition of an operation was violated."""


class FormatError(RteError, ValueError):
    """A file does not follow the expected binary or text layout."""


class ConsistencyError(RteError, ValueError):
    """Two related inputs disagree (for example image and label counts)."""


class ConfigError(RteError, ValueError):
    """A configuration key is unknown, mistyped, or out of range."""

    def __init__(self, key, message, line=None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{key}{where}: {message}")
