"""Shared exception types, mapped to CLI exit codes in cli.py."""


class UsageError(Exception):
    """Bad arguments or flag combinations (exit code 1)."""


class DataError(Exception):
    """Unreadable or malformed input data (exit code 2)."""


class DivergenceError(Exception):
    """Training produced a non-finite loss (exit code 3)."""
