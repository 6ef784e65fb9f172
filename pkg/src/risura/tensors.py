"""Dense complex tensor algebra in the CP (Kruskal) format.

Conventions used throughout the package:

* Tensors are plain ``numpy.ndarray`` objects; mode ``m`` (1-indexed) is
  axis ``m - 1``.
* Vectorization is column-major (first index fastest), so
  ``vec(x1 o x2 o ... o xd) = kron(xd, ..., x2, x1)``.
* ``unfold(T, m)`` puts mode ``m`` on the rows and enumerates the remaining
  indices with lower modes fastest.  With these conventions, for a factor
  list ``F`` (one matrix per mode, equal column counts),

      unfold(kruskal(F), m) == F[m-1] @ khatri_rao(F[d-1], ..., skip m-1, ..., F[0]).T

  where the Khatri-Rao runs over the other modes in *descending* order.

All functions are pure and never mutate their inputs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def vec(tensor: np.ndarray) -> np.ndarray:
    """Column-major vectorization (first index fastest)."""
    return np.asarray(tensor).reshape(-1, order="F")


def unvec(v: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`vec` for the given dimension list."""
    v = np.asarray(v)
    dims = tuple(int(d) for d in dims)
    if v.size != int(np.prod(dims)):
        raise ValueError(f"cannot reshape {v.size} entries into dims {dims}")
    return v.reshape(dims, order="F")


def outer_rank1(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Outer product x1 o x2 o ... o xd of at least two nonempty vectors."""
    if len(vectors) < 2:
        raise ValueError("outer_rank1 needs at least two vectors")
    arrays = [np.asarray(x).reshape(-1) for x in vectors]
    if any(a.size == 0 for a in arrays):
        raise ValueError("outer_rank1 got an empty vector")
    out = arrays[0]
    for a in arrays[1:]:
        out = np.multiply.outer(out, a)
    return out


def check_factor_set(factors: Sequence[np.ndarray]) -> int:
    """Validate a CP factor list (2-D, shared column count); returns K."""
    if len(factors) == 0:
        raise ValueError("empty factor list")
    mats = [np.asarray(f) for f in factors]
    if any(m.ndim != 2 for m in mats):
        raise ValueError("factors must be matrices")
    k = mats[0].shape[1]
    if k < 1 or any(m.shape[1] != k for m in mats):
        raise ValueError("factors must share a common column count >= 1")
    return k


def kruskal(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Tensor with CP representation given by ``factors`` (mode order as listed)."""
    check_factor_set(factors)
    dims = tuple(np.asarray(f).shape[0] for f in factors)
    # vec(T) = sum_k kron(f_d^k, ..., f_1^k) = row-sum of the descending Khatri-Rao.
    v = khatri_rao([np.asarray(f) for f in factors[::-1]]).sum(axis=1)
    return unvec(v, dims)


def unfold(tensor: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` (1-indexed) unfolding, lower modes fastest in the columns."""
    t = np.asarray(tensor)
    if not 1 <= mode <= t.ndim:
        raise IndexError(f"mode {mode} out of range for order-{t.ndim} tensor")
    return np.moveaxis(t, mode - 1, 0).reshape((t.shape[mode - 1], -1), order="F")


def refold(matrix: np.ndarray, mode: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold` for a tensor with dimension list ``dims``."""
    dims = tuple(int(d) for d in dims)
    if not 1 <= mode <= len(dims):
        raise IndexError(f"mode {mode} out of range for dims {dims}")
    rest = [d for i, d in enumerate(dims) if i != mode - 1]
    t = np.asarray(matrix).reshape([dims[mode - 1]] + rest, order="F")
    return np.moveaxis(t, 0, mode - 1)


def khatri_rao(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """Column-wise Kronecker product, in list order (first matrix slowest)."""
    mats = [np.asarray(m) for m in matrices]
    k = check_factor_set(mats)
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, k)
    return out


def hadamard(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise product of identically shaped matrices, in list order."""
    mats = [np.asarray(m) for m in matrices]
    if len(mats) == 0:
        raise ValueError("empty matrix list")
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise ValueError("hadamard needs identical shapes")
    out = mats[0].copy()
    for m in mats[1:]:
        out *= m
    return out


def kruskal_unfolding(factors: Sequence[np.ndarray], mode: int) -> np.ndarray:
    """``unfold(kruskal(factors), mode)`` without forming the full tensor."""
    check_factor_set(factors)
    if not 1 <= mode <= len(factors):
        raise IndexError(f"mode {mode} out of range")
    others = [factors[j] for j in range(len(factors) - 1, -1, -1) if j != mode - 1]
    return np.asarray(factors[mode - 1]) @ khatri_rao(others).T
