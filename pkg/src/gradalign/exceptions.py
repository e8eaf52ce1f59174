"""Exception hierarchy shared by all modules."""


class GradAlignError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(GradAlignError, ValueError):
    """Invalid configuration or mismatched dimensions."""


class InputError(GradAlignError, ValueError):
    """An argument is outside the domain of the operation."""


class OnPolicyError(GradAlignError, RuntimeError):
    """A rollout group was used with a policy other than the one that sampled it."""


class NumericError(GradAlignError, ArithmeticError):
    """A non-finite value appeared in a loss, gradient or parameter vector."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}
