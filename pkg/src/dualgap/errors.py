"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or inconsistent input (shapes, ranges, unknown names)."""


class ContractError(ValueError):
    """An operation's precondition does not hold (e.g. non-metric cost)."""


class UnsupportedGeneratorError(ContractError):
    """The requested solver path does not handle this generator."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before reaching its tolerance.

    ``residual`` carries the last measured error and ``best`` (if any) the
    best iterate seen, so callers can still inspect a partial answer.
    """

    def __init__(self, message, residual=float("nan"), best=None):
        super().__init__(message)
        self.residual = residual
        self.best = best
