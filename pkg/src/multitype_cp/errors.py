class DomainError(ValueError):
    """Inputs outside the domain where an operation is defined."""


class ResourceError(RuntimeError):
    """A configured budget (cone size, buffer) was exceeded."""


class EstimationError(ValueError):
    """Not enough data to form an estimate."""


class WindowViolation(RuntimeError):
    """An interface edge reached the buffer of the simulated window.

    The partial trace collected up to the violation is attached as ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
