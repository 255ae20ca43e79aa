"""Exception hierarchy shared by every ffsm module.

Each class carries an ``exit_code`` so the CLI can map failures onto its
documented exit statuses without a lookup table.
"""


class FfsmError(Exception):
    exit_code = 1


class UsageError(FfsmError):
    exit_code = 2


class ConfigError(UsageError):
    pass


class DimensionError(FfsmError, ValueError):
    exit_code = 3


class GeometryError(FfsmError, ValueError):
    exit_code = 3


class FormatError(FfsmError):
    exit_code = 3


class ParseError(FormatError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class CapacityError(FfsmError):
    exit_code = 3


class DegenerateInputError(FfsmError, ValueError):
    exit_code = 3


class NumericError(FfsmError, ArithmeticError):
    exit_code = 4


class GraphError(FfsmError, RuntimeError):
    exit_code = 4
