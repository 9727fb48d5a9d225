"""
Exceptions for the multiport tools.

Each error carries the exit code the CLI returns for it, so scripts can tell
usage problems (2) from I/O problems (3), shape problems (4) and solver
failures (5).
"""


class MultiportError(Exception):
    exit_code = 1


class UsageError(MultiportError):
    exit_code = 2


class ConfigError(MultiportError):
    exit_code = 2


class DataFormatError(MultiportError):
    """File missing, unreadable, or not in one of the documented formats"""
    exit_code = 3


class DimensionMismatch(MultiportError):
    exit_code = 4


class DegenerateGauge(MultiportError):
    """A border entry is too small for its phase to be defined"""
    exit_code = 4

    def __init__(self, row, col, magnitude):
        self.row = row
        self.col = col
        self.magnitude = magnitude
        super().__init__(
            f"entry [{row}][{col}] has magnitude {magnitude:.3g}; "
            "its phase is undefined so the matrix cannot be real-bordered"
        )


class EmptyInput(MultiportError):
    exit_code = 4


class NonConvergence(MultiportError):
    exit_code = 5

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


class UncertaintyFailure(MultiportError):
    exit_code = 5


class InvalidPorts(MultiportError, ValueError):
    """Port indices out of range, or a pair that repeats a port"""
    exit_code = 2
