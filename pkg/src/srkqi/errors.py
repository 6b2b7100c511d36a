"""Exception types shared across the package.

Everything raised on anticipated bad input or numerical failure derives from
``Error`` so the CLI can map it to exit code 1; anything else escaping is an
internal bug (exit code 2).
"""


class Error(Exception):
    pass


class ParseError(Error):
    """Malformed tableau or tree text; message carries a line number."""


class ConfigError(Error):
    """Invalid parameter combination or study configuration."""


class TreeCapError(Error):
    """Tree enumeration would exceed the configured count cap."""


class NonConvergenceError(Error):
    """Iterative stage solver hit its iteration cap in tolerance mode."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DivergenceError(Error):
    """A non-finite or exploding state was produced while stepping."""

    def __init__(self, message, step_index=None, last_state=None):
        super().__init__(message)
        self.step_index = step_index
        self.last_state = last_state


class SingularMatrixError(Error):
    """Newton matrix had a pivot below the relative threshold."""
