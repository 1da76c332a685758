"""Exception types shared across the package."""


class RejectedInput(ValueError):
    """An argument violates an operation's precondition."""


class ConfigurationError(ValueError):
    """A configuration value is out of its supported range."""


class NonFiniteError(RuntimeError):
    """A NaN or infinity appeared during training or integration.

    ``step`` is the iteration at which it was detected and ``state``
    carries whatever partial object the caller may want to persist.
    """

    def __init__(self, message, step=None, state=None):
        super().__init__(message)
        self.step = step
        self.state = state


class FormatError(ValueError):
    """A binary container or config file could not be parsed."""
