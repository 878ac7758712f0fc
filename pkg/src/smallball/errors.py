"""Exception hierarchy shared by every module of the package."""


class SmallBallError(Exception):
    """Base class for all errors raised by smallball."""


class InvalidArgumentError(SmallBallError, ValueError):
    """An argument violates a documented precondition."""


class EvaluationError(SmallBallError):
    """A function description produced a non-finite value."""


class SmoothnessError(InvalidArgumentError):
    """An operator that needs a C^1 input received a non-smooth one."""


class AssemblyError(SmallBallError):
    """Kernel matrix assembly produced non-finite entries."""


class NumericalError(SmallBallError):
    """A factorization or solve failed; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class EmbeddingError(SmallBallError):
    """Circulant embedding has materially negative eigenvalues."""


class GeneratorRequirementError(SmallBallError):
    """A check needs the underlying Wiener process but the batch lacks it."""


class InsufficientDataError(SmallBallError):
    """Too few usable points survive the probability band filter."""


class ConfigError(SmallBallError):
    """Run configuration failed validation; message names the field path."""


class SingularDiagonalError(InvalidArgumentError):
    """The polar kernel was evaluated on its diagonal z = t."""
