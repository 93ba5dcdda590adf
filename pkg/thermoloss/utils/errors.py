"""
Exception hierarchy for the thermoloss toolkit.

Each family carries the process exit code the command line reports for it:
2 for configuration problems, 3 for data problems, 4 for numerical failures.
Plain argument mistakes (bad factor, mismatched shapes) raise ValueError.
"""


class ThermolossError(Exception):
    """Base class for every error raised on purpose by the toolkit."""

    exit_code = 1


class ConfigError(ThermolossError):
    """Invalid configuration key or value, or a malformed definition file."""

    exit_code = 2

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ConstraintError(ConfigError):
    """Constraint set that is contradictory or does not fit the model shape."""


class DataError(ThermolossError):
    """Input data that cannot be turned into a usable dataset."""

    exit_code = 3


class SchemaError(DataError):
    """A column required by the CSV schema is missing."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class ParseError(DataError):
    """A cell could not be parsed as a number."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class InsufficientDataError(DataError):
    """Too few samples for the requested operation."""


class SplitError(DataError):
    """A segment is too short to be split into train and test parts."""

    def __init__(self, message, segment=None):
        super().__init__(message)
        self.segment = segment


class NumericalError(ThermolossError):
    """A numerical procedure cannot produce a meaningful result."""

    exit_code = 4


class IllConditionedError(NumericalError):
    """The regression Gram matrix is numerically singular."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class EstimatorNotInvertibleError(NumericalError):
    """The input map has no left inverse (rank-deficient B_bar)."""


class SimulationOverflowError(NumericalError):
    """A simulated trajectory left the finite range."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DiscretizationError(NumericalError):
    """A thermal network cannot be discretized (singular dynamics)."""
