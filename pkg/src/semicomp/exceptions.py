"""Exception hierarchy. Each class maps to a CLI exit code."""


class SemicompError(Exception):
    exit_code = 1


class ConfigError(SemicompError, ValueError):
    exit_code = 2


class DataError(SemicompError, ValueError):
    exit_code = 3


class NumericalError(SemicompError, ArithmeticError):
    exit_code = 4
