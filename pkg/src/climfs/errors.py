"""Exception types shared across the package."""


class ClimFsError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(ClimFsError):
    """Invalid configuration, manifest, or input file."""


class NumericError(ClimFsError):
    """A numeric kernel hit a degenerate or ill-posed instance."""
