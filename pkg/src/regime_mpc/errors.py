"""Exception hierarchy. Each family maps to one CLI exit code."""


class RegimeMPCError(Exception):
    exit_code = 1


class ConfigError(RegimeMPCError, ValueError):
    exit_code = 2


class DataError(RegimeMPCError, ValueError):
    exit_code = 3


class SolverError(RegimeMPCError, RuntimeError):
    exit_code = 4


class InfeasibleError(SolverError):
    pass


class NotConvexError(SolverError):
    pass


class IterationLimitError(SolverError):
    pass


class BankruptcyError(RegimeMPCError):
    """Raised when realized wealth drops to zero or below.

    The partial ledger up to and including the failing day is kept on
    ``ledger`` so callers can still report it.
    """

    exit_code = 5

    def __init__(self, message, ledger=None):
        super().__init__(message)
        self.ledger = ledger if ledger is not None else []
