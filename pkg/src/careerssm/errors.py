"""Exception hierarchy shared by every module."""


class CareerSSMError(Exception):
    """Base class for all package errors."""


class ValidationError(CareerSSMError, ValueError):
    """Input data or configuration violates a documented contract."""


class NumericalError(CareerSSMError, ArithmeticError):
    """A linear-algebra step failed (non-PD matrix, all-zero weights, ...).

    ``step`` and ``iteration`` are filled in by the Gibbs driver so that a
    failure deep inside a long chain can be located.
    """

    def __init__(self, message, step=None, iteration=None):
        super().__init__(message)
        self.step = step
        self.iteration = iteration

    def __str__(self):
        msg = super().__str__()
        where = []
        if self.iteration is not None:
            where.append(f"iteration {self.iteration}")
        if self.step is not None:
            where.append(f"step {self.step}")
        return f"{msg} ({', '.join(where)})" if where else msg
