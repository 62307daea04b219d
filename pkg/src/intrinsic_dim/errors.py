"""Exception types shared by every module."""


class IDError(Exception):
    """Base class for all package errors."""


class ParameterError(IDError, ValueError):
    pass


class DegenerateError(IDError, ArithmeticError):
    """Zero distances, zero spectra and similar cases an estimate cannot recover from."""


class SchemaError(IDError, KeyError):
    def __init__(self, key, message=None):
        self.key = key
        super().__init__(message or f"unknown or invalid key: {key!r}")

    def __str__(self):
        return self.args[0]


class UnknownEstimatorError(IDError, KeyError):
    def __str__(self):
        return self.args[0]


class ConditioningError(IDError, ArithmeticError):
    pass


class NoLinearRegionError(IDError, ArithmeticError):
    pass


class NonConvergenceError(IDError, ArithmeticError):
    pass
