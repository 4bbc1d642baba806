"""Small input-validation helpers shared across the package."""
from __future__ import annotations

import numpy as np

__all__ = ["ValidationError", "require", "as_float_vector", "as_float_matrix"]


class ValidationError(ValueError):
    """Invalid model data or file content; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


def require(condition: bool, field: str, message: str) -> None:
    if not condition:
        raise ValidationError(field, message)


def as_float_vector(value, field: str, size: int | None = None) -> np.ndarray:
    arr = np.asarray(value, dtype=float).ravel()
    if size is not None and arr.size != size:
        raise ValidationError(field, f"expected length {size}, got {arr.size}")
    if arr.size and not np.all(np.isfinite(arr) | np.isinf(arr)):
        raise ValidationError(field, "contains NaN")
    return arr


def as_float_matrix(value, field: str, shape: tuple[int, int] | None = None) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if shape is not None and arr.shape != shape:
        raise ValidationError(field, f"expected shape {shape}, got {arr.shape}")
    return arr
