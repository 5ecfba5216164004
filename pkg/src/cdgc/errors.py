"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class GraphError(ValueError):
    """Graph is unusable for the requested operation (e.g. disconnected)."""


class ParseError(ValueError):
    """A text file could not be parsed. Carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class FormatError(ParseError):
    """File parsed but its contents contradict its own header."""


class ConfigError(ValueError):
    """Invalid configuration key or value."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(message)


class NumericError(ArithmeticError):
    """Non-finite value met where a finite one is required."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(message)
