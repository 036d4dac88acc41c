"""Exception types shared across the package."""


class SlfvError(Exception):
    """Base class for all package errors."""


class ConfigError(SlfvError, ValueError):
    """A model, domain or run configuration violates an invariant."""

    def __init__(self, message, errors=None):
        if isinstance(message, (list, tuple)):
            errors, message = list(message), "; ".join(map(str, message))
        super().__init__(message)
        self.errors = list(errors) if errors else [message]


class InputError(SlfvError, ValueError):
    """An argument is outside the domain of an operation."""


class DomainError(SlfvError, ValueError):
    """An event does not fit on the torus it is applied to."""


class ResolutionError(SlfvError, ValueError):
    """A requested scale is below the grid resolution."""


class ResolutionWarning(UserWarning):
    """A grid is probably too coarse for the requested computation."""


class SamplingWarning(UserWarning):
    """Too few samples for a trustworthy estimate."""
