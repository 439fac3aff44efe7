"""Orthonormal DCT-II along the time axis of embedding matrices.

The transform is a cached dense ``N x N`` matrix per sequence length. Because
the matrix is orthogonal, the inverse is its transpose, which also makes
``dct2`` the adjoint (and hence the backward pass) of ``idct2``.
"""

import threading
from functools import lru_cache

import numpy as np

from .errors import ValidationError

__all__ = ["dct_matrix", "dct2", "idct2", "dct2_matrix", "idct2_matrix"]

_lock = threading.Lock()


@lru_cache(maxsize=64)
def _build_matrix(n):
    k = np.arange(n, dtype=np.float64)[:, None]
    t = np.arange(n, dtype=np.float64)[None, :]
    mat = np.cos(np.pi / n * (t + 0.5) * k)
    mat[0] *= np.sqrt(1.0 / n)
    mat[1:] *= np.sqrt(2.0 / n)
    mat.setflags(write=False)
    return mat


def dct_matrix(n):
    """Return the read-only ``n x n`` orthonormal DCT-II matrix.

    Row ``k`` holds the sampled cosine of frequency ``k``, so ``D @ x`` gives
    the coefficients of ``x`` and ``D.T @ X`` inverts them.
    """
    n = int(n)
    if n < 1:
        raise ValidationError(f"sequence length must be >= 1, got {n}")
    with _lock:
        return _build_matrix(n)


def _check_finite(a, what):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0 or a.shape[0] < 1:
        raise ValidationError(f"{what} must have length >= 1 along the time axis")
    bad = ~np.isfinite(a)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        idx = idx[0] if len(idx) == 1 else idx
        raise ValidationError(f"{what} contains a non-finite value at index {idx}")
    return a


def dct2(x):
    """Orthonormal DCT-II of a 1-D sequence."""
    x = _check_finite(x, "input sequence")
    if x.ndim != 1:
        raise ValidationError(f"expected a 1-D sequence, got shape {x.shape}")
    return dct_matrix(x.shape[0]) @ x


def idct2(coeffs):
    """Inverse of :func:`dct2`."""
    coeffs = _check_finite(coeffs, "coefficient sequence")
    if coeffs.ndim != 1:
        raise ValidationError(f"expected a 1-D sequence, got shape {coeffs.shape}")
    return dct_matrix(coeffs.shape[0]).T @ coeffs


def dct2_matrix(emb, check=True):
    """Transform every column (embedding dimension) of an ``N x E`` matrix.

    A leading batch axis is accepted: ``(B, N, E)`` arrays are transformed
    per item along axis 1.
    """
    if check:
        emb = _check_finite(emb, "embedding matrix")
    if emb.ndim == 3:
        return np.matmul(dct_matrix(emb.shape[1]), emb)
    if emb.ndim != 2:
        raise ValidationError(f"expected an N x E matrix, got shape {emb.shape}")
    return dct_matrix(emb.shape[0]) @ emb


def idct2_matrix(coeffs, check=True):
    """Inverse of :func:`dct2_matrix`, columnwise."""
    if check:
        coeffs = _check_finite(coeffs, "coefficient matrix")
    if coeffs.ndim == 3:
        return np.matmul(dct_matrix(coeffs.shape[1]).T, coeffs)
    if coeffs.ndim != 2:
        raise ValidationError(f"expected an N x E matrix, got shape {coeffs.shape}")
    return dct_matrix(coeffs.shape[0]).T @ coeffs
