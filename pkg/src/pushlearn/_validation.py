"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

PROB_ATOL = 1e-12
LOAD_NORMALIZE_TOL = 1e-9


class ValidationError(ValueError):
    """Invalid input, optionally tagged with the offending field path."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


def check_probability_vector(p, field: str | None = None, atol: float = PROB_ATOL, error=ValidationError) -> np.ndarray:
    """Return `p` as a read-only float array after checking it lies on the simplex."""
    arr = np.array(p, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise error("expected a non-empty 1-d probability vector", field)
    if not np.all(np.isfinite(arr)):
        raise error("probabilities must be finite", field)
    if np.any(arr < 0):
        raise error(f"negative entry at index {int(np.argmax(arr < 0))}", field)
    total = float(arr.sum())
    if abs(total - 1.0) > atol:
        raise error(f"entries sum to {total!r}, not 1", field)
    arr.setflags(write=False)
    return arr


def normalize_loaded_row(row, field: str | None = None, tol: float = LOAD_NORMALIZE_TOL, error=ValidationError) -> np.ndarray:
    """Renormalize a row read from a file if it is off by less than `tol`, reject otherwise."""
    try:
        arr = np.array(row, dtype=float)
    except (TypeError, ValueError) as exc:
        raise error(f"not a numeric list ({exc})", field) from None
    if arr.ndim != 1 or arr.size == 0:
        raise error("expected a non-empty list of probabilities", field)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise error("probabilities must be finite and non-negative", field)
    total = float(arr.sum())
    if abs(total - 1.0) >= tol:
        raise error(f"row sums to {total!r}; deviation exceeds {tol:g}", field)
    return arr / total


def check_int(value, name: str, minimum: int | None = None, error=ValidationError) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise error(f"expected an integer, got {value!r}", name)
    value = int(value)
    if minimum is not None and value < minimum:
        raise error(f"must be >= {minimum}, got {value}", name)
    return value


def check_open_unit(value, name: str) -> float:
    value = float(value)
    if not 0.0 < value < 1.0:
        raise ValidationError(f"must lie in (0, 1), got {value!r}", name)
    return value
