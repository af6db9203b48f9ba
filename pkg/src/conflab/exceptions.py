"""Exception types raised across the package."""


class ContractError(ValueError):
    """A precondition on shapes, ranges or arguments was violated."""


class DomainError(ValueError):
    """A numeric op received an input outside its mathematical domain."""


class FitError(RuntimeError):
    """A calibrator could not be fit to the given data."""


class TrainingError(RuntimeError):
    """Training diverged; ``epoch`` holds the failing epoch index."""

    def __init__(self, message: str, epoch: int | None = None, member: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.member = member


class CSVParseError(ValueError):
    """A CSV cell could not be parsed; carries 1-based ``row`` and ``column``."""

    def __init__(self, message: str, row: int, column: str):
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(ValueError):
    """An experiment configuration is malformed or references unknown names."""
