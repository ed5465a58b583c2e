"""Shared exception types mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid configuration; exits with code 1 from the CLI."""


class RunError(RuntimeError):
    """Failure during an experiment run; exits with code 2 from the CLI."""
