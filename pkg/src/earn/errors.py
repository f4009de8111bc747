"""Exception hierarchy shared across the package."""


class EarnError(Exception):
    """Base class for data and validation failures surfaced to users."""


class PoolFormatError(EarnError):
    """A pool manifest or prediction/label file is malformed or inconsistent."""


class GraphValidationError(EarnError):
    """An ensemble graph violates structural rules or references unknown models."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
