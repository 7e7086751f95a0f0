"""Dense float64 primitives on plain numpy arrays.

Arrays are the tensor type throughout the package: row-major, float64,
shape carried by the array itself.
"""

from __future__ import annotations

import numpy as np


def as_tensor(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 array with finite entries."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite entries")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(x: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``scale * x``, stabilised by subtracting the row max."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError(f"softmax_rows expects an m x n array with n >= 1, got {x.shape}")
    z = scale * x
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1 or b.shape[0] != w.shape[1]:
        raise ValueError(f"bias shape {b.shape} does not match weight {w.shape}")
    return matmul(x, w) + b
