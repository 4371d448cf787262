"""Exception types raised across the package.

Each class carries the process exit code the CLI maps it to.
"""


class AnnManifoldError(Exception):
    exit_code = 1


class InvalidParameter(AnnManifoldError, ValueError):
    """A tuning parameter is out of range (K too large, d too big, ...)."""

    exit_code = 2


class InvalidInput(AnnManifoldError, ValueError):
    """Input data violates a contract (non-finite values, bad pmf, shape mismatch)."""

    exit_code = 3


class FormatError(AnnManifoldError, ValueError):
    """A file on disk could not be parsed."""

    exit_code = 3


class DegenerateGrid(InvalidInput):
    pass


class InvalidState(AnnManifoldError, RuntimeError):
    """The operation cannot run on the object in its current state."""

    exit_code = 3


class NumericalFailure(AnnManifoldError, ArithmeticError):
    """A linear-algebra step failed or produced unusable output."""

    exit_code = 4
