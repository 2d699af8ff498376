"""Shared exception types, mapped to CLI exit codes."""


class UsageError(Exception):
    """Bad flag/argument combination (CLI exit code 1)."""


class DataError(Exception):
    """Malformed or infeasible input data (CLI exit code 2)."""


class TrainingDiverged(RuntimeError):
    """Non-finite values appeared in the embedding matrices."""
