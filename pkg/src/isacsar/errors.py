"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Inconsistent or physically impossible configuration."""


class ResourceError(RuntimeError):
    """A requested computation would exceed a declared resource budget."""
