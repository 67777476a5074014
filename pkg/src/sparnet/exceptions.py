"""Exception hierarchy. CLI exit codes hang off these classes."""


class SparnetError(Exception):
    exit_code = 1


class ShapeError(SparnetError, ValueError):
    pass


class InvalidStateError(SparnetError, RuntimeError):
    pass


class ConfigError(SparnetError, ValueError):
    exit_code = 1


class TrainingFailedError(SparnetError, RuntimeError):
    exit_code = 2

    def __init__(self, message, error_rate):
        super().__init__(message)
        self.error_rate = error_rate


class MissingArtifactError(ConfigError):
    exit_code = 3


class CheckpointFormatError(SparnetError, ValueError):
    exit_code = 3

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class ArchitectureMismatchError(CheckpointFormatError):
    pass


class NumericalError(SparnetError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term
