"""Shared exception types."""


class ContractError(ValueError):
    """An argument or intermediate value violates a documented precondition."""


class NumericError(RuntimeError):
    """A non-finite value appeared where finite math was required."""


class ConfigError(ValueError):
    """A run configuration is malformed (unknown key, bad value, bad file)."""


class DataError(RuntimeError):
    """Corpus files are missing, truncated, or inconsistent with their manifest."""
