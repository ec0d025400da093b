"""Pipeline error classes, mapped to distinct CLI exit codes."""


class CoinsError(Exception):
    exit_code = 1


class MissingInputError(CoinsError):
    """An input file or directory does not exist."""

    exit_code = 3


class SchemaError(CoinsError):
    """An input file exists but violates its record schema."""

    exit_code = 4


class ConfigError(CoinsError):
    """Invalid or conflicting run configuration."""

    exit_code = 5
