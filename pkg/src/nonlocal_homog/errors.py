"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class HomogError(Exception):
    exit_code = 1

    def __init__(self, message, *, stage=None):
        self.stage = stage
        super().__init__(message)

    def __str__(self):
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class ConfigError(HomogError, ValueError):
    """Invalid kernel/coefficient parameters or malformed configuration."""
    exit_code = 2


class UsageError(HomogError, ValueError):
    exit_code = 2


class NumericError(HomogError, ArithmeticError):
    exit_code = 3


class AssemblyError(NumericError):
    """A structural bound was violated while assembling an operator."""


class SpectralError(NumericError):
    pass


class SolverError(NumericError):
    pass


class ContourError(NumericError):
    pass


class InvariantError(HomogError):
    """An invariant or verdict check failed."""
    exit_code = 1
