"""Package-wide guards and numeric tolerances.

Each guard can be overridden through an environment variable of the same
name prefixed with ``PROOFGAMES_`` (read once at import time, before any
module copies the value), e.g. ``PROOFGAMES_DENSE_QUBIT_LIMIT=16``.
"""

import os


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(f"PROOFGAMES_{name}")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"PROOFGAMES_{name} must be an integer, got {raw!r}") from exc


# Largest qubit count for which dense 2^n matrices may be materialized.
DENSE_QUBIT_LIMIT = _env_int("DENSE_QUBIT_LIMIT", 14)

# Largest total Hilbert-space dimension games.value / games.seesaw will
# handle densely before raising a resource error.
DENSE_DIM_LIMIT = _env_int("DENSE_DIM_LIMIT", 1 << DENSE_QUBIT_LIMIT)

# classical_value enumerates at most this many deterministic strategies.
CLASSICAL_ENUM_LIMIT = _env_int("CLASSICAL_ENUM_LIMIT", 1 << 24)

# Default numeric tolerance for exact identities checked in floating point.
ATOL = 1e-9


class ResourceGuardError(RuntimeError):
    """Raised when a request would exceed a documented dense-size guard."""
