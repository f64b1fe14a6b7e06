"""Exception hierarchy shared by every stage of the pipeline."""


class FslError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidArgument(FslError, ValueError):
    exit_code = 2


class ConfigError(FslError, ValueError):
    exit_code = 2


class DataError(FslError, ValueError):
    exit_code = 3


class NumericError(FslError, ArithmeticError):
    exit_code = 4


class DegenerateSeriesError(NumericError):
    """Raised when a statistic is undefined because the input has zero variance."""


class UndefinedEntropyError(NumericError):
    """Sample entropy has no finite value: one of the template-match counts is zero."""

    def __init__(self, n_m, n_m1):
        super().__init__(f"sample entropy undefined (N_m={n_m}, N_m+1={n_m1})")
        self.n_m = n_m
        self.n_m1 = n_m1


class DivergedForecastError(NumericError):
    pass
