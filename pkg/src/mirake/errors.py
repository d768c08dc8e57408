"""Exception types raised by the estimation pipelines."""


class MirakeError(Exception):
    """Base class for all package errors."""


class InvalidInput(MirakeError, ValueError):
    """Inputs violate a documented precondition."""


class DimensionMismatch(InvalidInput):
    pass


class NumericalError(MirakeError, ArithmeticError):
    """Base class for failures of an iterative or linear-algebra step."""


class NonConvergence(NumericalError):
    """An iterative solver hit its iteration cap.

    The partially converged state, when available, is attached as ``state``.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class SingularDesign(NumericalError):
    pass


class CollinearAuxiliaries(NumericalError):
    pass


class DegenerateVariance(NumericalError):
    pass


class EmptySource(InvalidInput):
    pass


class EmptySupport(InvalidInput):
    pass


class InsufficientControls(InvalidInput):
    pass


class DataError(MirakeError):
    """Base class for problems with an input data file."""


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ConfigError(MirakeError):
    pass


class DegenerateKernel(NumericalError):
    """All kernel weights underflow at an evaluation point."""
