"""Exception hierarchy shared by the library and the CLI."""


class SynRLError(Exception):
    """Base class for every error raised by synrl."""

    exit_code = 1


class ConfigError(SynRLError, ValueError):
    exit_code = 2


class MissingFileError(SynRLError, FileNotFoundError):
    exit_code = 3


class SchemaError(SynRLError, ValueError):
    exit_code = 4


class ConstantColumnError(SchemaError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"constant column(s) rejected: {', '.join(self.columns)}")


class MissingValueError(SchemaError):
    pass


class DimensionMismatchError(SynRLError, ValueError):
    exit_code = 5


class DataError(SynRLError, ValueError):
    exit_code = 5


class NonFiniteError(SynRLError, FloatingPointError):
    exit_code = 6


class OutputExistsError(SynRLError, FileExistsError):
    exit_code = 7


class MetricError(SynRLError, ValueError):
    """A metric failed; ``metric`` names which one."""

    exit_code = 5

    def __init__(self, metric, message):
        self.metric = metric
        super().__init__(f"{metric}: {message}")
