"""Exception hierarchy and process exit codes."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class BenchError(Exception):
    """Base class for errors raised by this package."""

    exit_code = EXIT_CONFIG


class ConfigError(BenchError):
    """Invalid parameter values or malformed config text."""

    exit_code = EXIT_CONFIG


class DataError(BenchError):
    """Malformed, truncated, or incompatible data files and datasets."""

    exit_code = EXIT_DATA


class NumericError(BenchError):
    """Numerically degenerate input (zero vectors, undefined ratios)."""

    exit_code = EXIT_NUMERIC
