"""Error hierarchy shared by every module.

Each exception carries the exit code the command line maps it to:
0 success, 1 validation, 2 runtime, 3 numerical regime.
"""


class DbpSimError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 2


class ConfigError(DbpSimError, ValueError):
    """Configuration could not be parsed or failed validation.

    ``problems`` lists every violation found, each as ``"key.path: message"``
    (or ``"line L, column C: message"`` for parse errors).
    """

    exit_code = 1

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ContractError(DbpSimError, ValueError):
    """A caller broke an operation's precondition."""


class DomainError(DbpSimError, ValueError):
    """Argument outside the mathematical domain of a special function."""

    exit_code = 3


class NumericalOverflowError(DbpSimError, OverflowError):
    """Result not representable in double precision."""

    exit_code = 3


class RegimeError(DbpSimError, ArithmeticError):
    """Parameters fall outside the regime where an analytical result holds."""

    exit_code = 3


class ConvergenceError(DbpSimError, ArithmeticError):
    """An iterative or adaptive numerical method did not converge."""

    exit_code = 3


class InstabilityError(DbpSimError, RuntimeError):
    """The stability watchdog aborted a simulation run."""
