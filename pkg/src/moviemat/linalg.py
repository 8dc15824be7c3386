"""Dense matrix kernels for small factor and target matrices.

Matrices are 2-D C-contiguous float64 numpy arrays. Every kernel walks its
output in row-major order and accumulates left to right, so identical inputs
give bitwise-identical results from run to run on the same machine. The
compiled kernels keep that ordering: fastmath stays off, so no reassociation
or FMA contraction is allowed.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = [
    "as_matrix",
    "matmul",
    "matmul_transpose_left",
    "masked_frobenius_sq",
    "scaled_add_in_place",
]


@njit(cache=True)
def _matmul_transpose_left(a, b, out):
    # out = a^T b, accumulated in index order
    for r in range(a.shape[1]):
        for c in range(b.shape[1]):
            acc = 0.0
            for t in range(a.shape[0]):
                acc += a[t, r] * b[t, c]
            out[r, c] = acc


@njit(cache=True)
def _matmul(a, b, out):
    for r in range(a.shape[0]):
        for c in range(b.shape[1]):
            acc = 0.0
            for t in range(a.shape[1]):
                acc += a[r, t] * b[t, c]
            out[r, c] = acc


@njit(cache=True)
def _masked_frobenius_sq(pred, target, mask):
    total = 0.0
    for r in range(pred.shape[0]):
        for c in range(pred.shape[1]):
            if mask[r, c]:
                d = pred[r, c] - target[r, c]
                total += d * d
    return total


@njit(cache=True)
def _scaled_add(a, alpha, g):
    for r in range(a.shape[0]):
        for c in range(a.shape[1]):
            a[r, c] = a[r, c] + alpha * g[r, c]


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce ``values`` to a validated 2-D float64 C-contiguous array.

    Args:
        values: Anything ``np.asarray`` accepts.
        rows: Expected row count, checked when given.
        cols: Expected column count, checked when given.

    Returns:
        The validated array (a copy only when coercion requires one).

    Raises:
        ValueError: If the input is not 2-D, has a shape mismatch, or
            contains NaN or infinity.
    """
    a = np.ascontiguousarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got {a.ndim}-D")
    if rows is not None and a.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise ValueError(f"expected {cols} columns, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``a @ b`` with a fixed left-to-right accumulation order."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul needs two 2-D matrices")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} vs {b.shape}")
    out = np.empty((a.shape[0], b.shape[1]))
    _matmul(np.ascontiguousarray(a, dtype=np.float64),
            np.ascontiguousarray(b, dtype=np.float64), out)
    return out


def matmul_transpose_left(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``a.T @ b`` without materialising the transpose.

    Both inputs must share their row count (the contraction axis). This is
    the product that turns an f-by-k user block and an f-by-k item block
    into a k-by-k predicted target.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul_transpose_left needs two 2-D matrices")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"row counts differ: {a.shape} vs {b.shape}")
    out = np.empty((a.shape[1], b.shape[1]))
    _matmul_transpose_left(np.ascontiguousarray(a, dtype=np.float64),
                           np.ascontiguousarray(b, dtype=np.float64), out)
    return out


def masked_frobenius_sq(pred: np.ndarray, target: np.ndarray,
                        mask: np.ndarray) -> float:
    """Sum of squared residuals over the cells where ``mask`` is True."""
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.shape}, target {target.shape}, "
            f"mask {mask.shape}")
    return float(_masked_frobenius_sq(
        np.ascontiguousarray(pred, dtype=np.float64),
        np.ascontiguousarray(target, dtype=np.float64),
        np.ascontiguousarray(mask, dtype=np.bool_)))


def scaled_add_in_place(a: np.ndarray, alpha: float, g: np.ndarray) -> None:
    """Update ``a += alpha * g`` in place, entry by entry.

    Raises:
        ValueError: On shape mismatch, or if the update produced a
            non-finite entry (the array is left in its updated state so the
            caller can inspect it).
    """
    if a.shape != g.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {g.shape}")
    if a.dtype != np.float64 or not a.flags.c_contiguous:
        raise ValueError("target array must be C-contiguous float64")
    _scaled_add(a, float(alpha), np.ascontiguousarray(g, dtype=np.float64))
    if not np.all(np.isfinite(a)):
        raise ValueError("scaled_add_in_place produced non-finite entries")
