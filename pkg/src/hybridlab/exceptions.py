"""Exception hierarchy shared across hybridlab.

The CLI maps each family to an exit code: configuration problems exit 2,
numerical failures exit 3 and data problems exit 4.
"""


class HybridLabError(Exception):
    """Base class for all hybridlab errors."""

    exit_code = 1


class ConfigError(HybridLabError, ValueError):
    exit_code = 2


class NumericalError(HybridLabError, ArithmeticError):
    """Non-finite state or failed solve inside a simulator."""

    exit_code = 3


class SaturationError(NumericalError):
    """Surface concentration left the open interval (0, c_s_max)."""

    def __init__(self, message, electrode=None, time=None):
        super().__init__(message)
        self.electrode = electrode
        self.time = time


class SingularityError(NumericalError):
    """Rational OCV map evaluated at (or numerically near) a pole."""


class TrainingError(NumericalError):
    """Training diverged; carries the last model with a finite loss."""

    def __init__(self, message, epoch=None, last_good=None):
        super().__init__(message)
        self.epoch = epoch
        self.last_good = last_good


class DataError(HybridLabError, ValueError):
    exit_code = 4


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class AlignmentError(DataError):
    pass


class WiringError(DataError):
    """A feature required by a FeatureSpec is missing from a record."""

    def __init__(self, message, feature=None):
        super().__init__(message)
        self.feature = feature


class ProfileRangeError(HybridLabError, ValueError):
    pass


class DegenerateProfileError(HybridLabError, ValueError):
    pass
