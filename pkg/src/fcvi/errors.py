"""Exception types shared across the package."""


class FCVIError(Exception):
    """Base class for all package errors."""


class InputError(FCVIError, ValueError):
    """Malformed argument: wrong dimension, infeasible probe, bad geometry."""


class ConfigError(FCVIError, ValueError):
    """Invalid or incompatible configuration."""


class NumericalFailure(FCVIError, ArithmeticError):
    """A solver produced a non-finite value."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class FitError(FCVIError, ValueError):
    """Not enough usable points to fit a rate."""


class UnsupportedDimension(FCVIError, ValueError):
    """Grid oracles only run at desk scale."""
