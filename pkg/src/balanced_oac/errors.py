"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so modules must raise the
specific class rather than a bare ValueError when the condition is one of
config / capacity / divergence.
"""


class ConfigError(ValueError):
    """A configuration value violates a documented invariant."""


class CapacityError(ValueError):
    """A request exceeds the available time-frequency resources."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or model state."""
