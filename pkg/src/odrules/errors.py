"""Exception hierarchy. Each family maps to one CLI exit code."""


class OdRulesError(Exception):
    exit_code = 4


class UsageError(OdRulesError):
    """Bad flags, bad config keys, or a requested column that does not exist."""

    exit_code = 2


class DataError(OdRulesError, ValueError):
    """Input data violates a precondition (shape, missing cells, columns)."""

    exit_code = 3


class MissingColumnError(DataError):
    def __init__(self, column, where=""):
        self.column = column
        msg = f"missing column {column!r}"
        super().__init__(f"{msg} in {where}" if where else msg)


class NumericError(OdRulesError, ArithmeticError):
    """Numerical failure at runtime: divergence, undefined metric."""

    exit_code = 4


class TrainingDivergedError(NumericError):
    pass


class MissingTargetError(MissingColumnError):
    """The requested target column is absent; treated as a usage error."""

    exit_code = 2
