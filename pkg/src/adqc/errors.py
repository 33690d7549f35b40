"""Exception hierarchy shared across the package."""


class AdqcError(Exception):
    """Base class for all package errors."""


class ValidationError(AdqcError, ValueError):
    """Input data violates a documented schema or invariant."""


class DegenerateItemError(ValidationError):
    """An item cannot be estimated because some category was never observed."""

    def __init__(self, item, message):
        super().__init__(f"{item}: {message}")
        self.item = item


class EstimationError(AdqcError):
    """A numerical procedure failed or was given unusable input."""
