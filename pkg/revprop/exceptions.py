"""Reversible training exceptions."""
from typing import Optional


class RevpropError(Exception):
    """Base exception for all reversible training errors."""


class ShapeError(RevpropError, ValueError):
    """Exception raised when tensor dimensions violate an operation's contract."""


class ContractError(RevpropError):
    """Exception raised when a cache is passed to the wrong backward function."""


class NonFiniteError(RevpropError, ArithmeticError):
    """Exception raised when an operation produces NaN or Inf."""


class LabelError(RevpropError, ValueError):
    """Exception raised when a class label is outside ``[0, num_classes)``."""


class AccountingError(RevpropError):
    """Exception raised when the memory ledger would go negative."""


class SchedulerError(RevpropError):
    """Exception raised when a pipeline lane fails during a training step."""


class MissingGradientError(RevpropError, KeyError):
    """Exception raised when an update is missing a parameter's gradient."""


class BudgetError(RevpropError):
    """Exception raised when not even a batch of one fits a memory budget."""


class ConfigError(RevpropError):
    """Exception raised when a configuration file or flag is invalid.

    :param message: A description of the problem.
    :param lineno: The line number of the offending ``key = value`` pair, if
        the error came from a configuration file.
    :param filename: The name of the configuration file, if known.
    """

    def __init__(
        self,
        message: str,
        *,
        lineno: Optional[int] = None,
        filename: Optional[str] = None,
    ) -> None:
        super().__init__(message)
        self.message = message
        self.lineno = lineno
        self.filename = filename

    def __str__(self) -> str:
        if self.lineno is None:
            return self.message
        where = f"{self.filename}:" if self.filename else "line "
        return f"{self.message}, on {where}{self.lineno}"
