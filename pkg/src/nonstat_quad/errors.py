"""Exception types shared across the package."""


class CostCapError(RuntimeError):
    """Raised when an exact computation would exceed its configured size cap."""
