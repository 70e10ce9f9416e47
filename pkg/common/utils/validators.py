import math

from common.errors import ConfigError


def _as_int(value, field: str, message: str) -> int:
    if isinstance(value, bool) or value is None:
        raise ConfigError(field, message)
    try:
        as_int = int(value)
        exact = as_int == value
    except (TypeError, ValueError, OverflowError):
        raise ConfigError(field, message) from None
    if not exact:
        raise ConfigError(field, message)
    return as_int


def _as_float(value, field: str, message: str) -> float:
    if isinstance(value, bool) or value is None:
        raise ConfigError(field, message)
    try:
        as_float = float(value)
    except (TypeError, ValueError, OverflowError):
        raise ConfigError(field, message) from None
    if not math.isfinite(as_float):
        raise ConfigError(field, message)
    return as_float


def ensure_positive_int(value, field: str) -> int:
    message = "must be an integer >= 1"
    if _as_int(value, field, message) < 1:
        raise ConfigError(field, message)
    return int(value)


def ensure_nonnegative_int(value, field: str) -> int:
    message = "must be an integer >= 0"
    if _as_int(value, field, message) < 0:
        raise ConfigError(field, message)
    return int(value)


def ensure_positive(value, field: str) -> float:
    if _as_float(value, field, "must be > 0") <= 0:
        raise ConfigError(field, "must be > 0")
    return float(value)


def ensure_nonnegative(value, field: str) -> float:
    if _as_float(value, field, "must be >= 0") < 0:
        raise ConfigError(field, "must be >= 0")
    return float(value)


def ensure_choice(value, choices, field: str) -> str:
    if value not in choices:
        raise ConfigError(field, f"must be one of {sorted(choices)}, got {value!r}")
    return value
