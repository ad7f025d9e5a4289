"""Typed exceptions shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class ConfigError(Exception):
    """Invalid configuration: bad schema, missing paths, mismatched rasters."""


class DataError(Exception):
    """Invalid or inconsistent data content."""


class ParseError(DataError):
    """Malformed input file; the message names the offending line."""


class NumericError(Exception):
    """Numerical failure: bad initialization, unreachable target, degenerate geometry."""
