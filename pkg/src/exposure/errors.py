"""Shared exception types."""


class DataError(Exception):
    """Bad or missing input data (datasets, config files, scripts)."""


class NumericError(Exception):
    """Non-finite values encountered during optimization."""


class CheckpointError(Exception):
    """Malformed checkpoint or architecture mismatch."""
