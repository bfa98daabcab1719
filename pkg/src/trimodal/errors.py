"""Exception types shared across the package."""


class TrimodalError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(TrimodalError, ValueError):
    """Invalid configuration value, selector, or precondition."""


class ShapeError(TrimodalError, ValueError):
    """Array shapes disagree with what an operation requires."""


class NumericError(TrimodalError, ValueError):
    """Non-finite values where finite ones are required."""
