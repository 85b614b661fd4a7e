"""Error categories shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad shapes, infeasible settings, unknown keys."""


class UsageError(RuntimeError):
    """API misuse: stepping a finished episode, mismatched batch contents."""
