"""Input validation helpers shared by the library and the estimator facade."""

from __future__ import annotations

import numpy as np


class ValidationError(ValueError):
    """Bad data or a violated contract. CLI maps this to exit code 2."""


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


def as_float_vector(values, name: str = "array") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    require(arr.ndim == 1, f"{name} must be 1-dimensional, got shape {arr.shape}")
    require(arr.size > 0, f"{name} must be nonempty")
    require(bool(np.isfinite(arr).all()), f"{name} contains non-finite values")
    return arr


def as_float_matrix(values, name: str = "array") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    require(arr.ndim == 2, f"{name} must be 2-dimensional, got shape {arr.shape}")
    require(arr.shape[0] > 0 and arr.shape[1] > 0, f"{name} must be nonempty")
    require(bool(np.isfinite(arr).all()), f"{name} contains non-finite values")
    return arr


def check_same_length(a, b, name_a: str = "first", name_b: str = "second") -> None:
    require(len(a) == len(b),
            f"{name_a} and {name_b} have different lengths ({len(a)} vs {len(b)})")


def check_mos_range(values, name: str = "MOS") -> None:
    arr = np.asarray(values, dtype=np.float64)
    bad = arr[(arr < 1.0) | (arr > 5.0) | ~np.isfinite(arr)]
    require(bad.size == 0,
            f"{name} values must lie in [1.0, 5.0]; offending values: {bad[:5].tolist()}")


def split_columns(matrix: np.ndarray, dims: list[int], name: str = "X") -> list[np.ndarray]:
    """Slice a (n, sum(dims)) matrix into per-model column blocks."""
    require(all(d > 0 for d in dims), "all feature dims must be positive")
    total = int(sum(dims))
    require(matrix.shape[1] == total,
            f"{name} has {matrix.shape[1]} columns but dims sum to {total}")
    blocks = []
    start = 0
    for d in dims:
        blocks.append(matrix[:, start:start + d])
        start += d
    return blocks
