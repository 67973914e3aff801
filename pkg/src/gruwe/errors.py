"""Exception hierarchy.

Each user-facing category carries the process exit code the CLI maps it to.
"""


class GruweError(Exception):
    exit_code = 5


class ConfigError(GruweError, ValueError):
    exit_code = 2


class DataError(GruweError, ValueError):
    exit_code = 3


class CheckpointError(DataError):
    pass


class TrainingError(GruweError, ArithmeticError):
    exit_code = 4


class InternalError(GruweError, RuntimeError):
    exit_code = 5


class ShapeError(GruweError, ValueError):
    exit_code = 5


class DomainError(GruweError, ValueError):
    exit_code = 5
