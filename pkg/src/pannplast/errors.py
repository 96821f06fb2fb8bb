"""Exception types raised by the public API."""


class PannPlastError(Exception):
    """Base class for all library errors."""


class SingularTensor(PannPlastError):
    pass


class NonFinite(PannPlastError):
    pass


class UnsupportedPrimitive(PannPlastError):
    pass


class DimensionMismatch(PannPlastError):
    pass


class InvalidParameter(PannPlastError):
    pass


class ZeroFlowDirection(PannPlastError):
    pass


class DivisionByZero(PannPlastError):
    """Ohno-Wang rate requested with zero effective stress but active flow."""


class NoConvergence(PannPlastError):
    def __init__(self, message, step=None, iterations=None):
        super().__init__(message)
        self.step = step
        self.iterations = iterations


class SingularJacobian(PannPlastError):
    pass


class LateralNoConvergence(NoConvergence):
    pass


class InvalidAmplitude(PannPlastError):
    pass


class LengthMismatch(PannPlastError):
    pass


class MalformedRow(PannPlastError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaVersionMismatch(PannPlastError):
    pass
