"""Small dense linear algebra: cyclic Jacobi eigensolver, Gram matrices, products.

Matrices here are tiny (K x K with K rarely above 16), so the eigensolver is a
plain cyclic Jacobi sweep. The batched variant rotates the same (p, q) pair of
every matrix in a stack at once; matrices that have converged get identity
rotations, which keeps each result bit-identical to the unbatched call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFinite, NonSquare, NonSymmetric

SYMMETRY_RTOL = 1e-12
OFFDIAG_RTOL = 1e-12
MAX_SWEEPS = 100


@dataclass(frozen=True)
class EigenResult:
    """Eigenpairs sorted by descending eigenvalue; ``eigenvectors[:, i]`` pairs with ``eigenvalues[i]``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NonFinite(f"{what} contains NaN or Inf")


def _check_symmetric_stack(a: np.ndarray) -> np.ndarray:
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise NonSquare(f"expected square matrix, got shape {a.shape}")
    _check_finite(a, "matrix")
    scale = np.maximum(1.0, np.max(np.abs(a), axis=(-2, -1), initial=0.0))
    asym = np.max(np.abs(a - np.swapaxes(a, -1, -2)), axis=(-2, -1), initial=0.0)
    if np.any(asym > SYMMETRY_RTOL * scale):
        raise NonSymmetric(f"asymmetry {float(np.max(asym)):.3e} exceeds tolerance")
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _off_norm(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    off = a * (1.0 - np.eye(n))
    return np.sqrt(np.sum(off * off, axis=(-2, -1)))


def canonicalize_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry of each is positive (first index wins ties)."""
    idx = np.argmax(np.abs(vectors), axis=-2)
    pivots = np.take_along_axis(vectors, idx[..., None, :], axis=-2)
    signs = np.where(pivots < 0.0, -1.0, 1.0)
    return vectors * signs


def sym_eig_batch(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecompose a stack of symmetric matrices of shape (B, n, n).

    Returns ``(eigenvalues, eigenvectors)`` with shapes (B, n) and (B, n, n),
    eigenvalues descending and eigenvector signs canonicalized.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 3:
        raise NonSquare(f"expected a (B, n, n) stack, got shape {a.shape}")
    a = _check_symmetric_stack(a)
    batch, n, _ = a.shape
    v = np.broadcast_to(np.eye(n), (batch, n, n)).copy()
    tol = OFFDIAG_RTOL * np.sqrt(np.sum(a * a, axis=(-2, -1)))

    for _ in range(MAX_SWEEPS):
        off = _off_norm(a)
        # off > 0 keeps the zero matrix (tol == 0) from spinning
        active = (off >= tol) & (off > 0.0)
        if not np.any(active):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                rotate = active & (apq != 0.0)
                if not np.any(rotate):
                    continue
                safe_apq = np.where(rotate, apq, 1.0)
                theta = (a[:, q, q] - a[:, p, p]) / (2.0 * safe_apq)
                t = np.where(theta >= 0.0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                c = np.where(rotate, c, 1.0)[:, None]
                s = np.where(rotate, s, 0.0)[:, None]

                col_p = a[:, :, p].copy()
                col_q = a[:, :, q].copy()
                a[:, :, p] = c * col_p - s * col_q
                a[:, :, q] = s * col_p + c * col_q
                row_p = a[:, p, :].copy()
                row_q = a[:, q, :].copy()
                a[:, p, :] = c * row_p - s * row_q
                a[:, q, :] = s * row_p + c * row_q
                a[rotate, p, q] = 0.0
                a[rotate, q, p] = 0.0

                vp = v[:, :, p].copy()
                vq = v[:, :, q].copy()
                v[:, :, p] = c * vp - s * vq
                v[:, :, q] = s * vp + c * vq

    eigenvalues = np.diagonal(a, axis1=-2, axis2=-1).copy()
    order = np.argsort(-eigenvalues, axis=-1, kind="stable")
    eigenvalues = np.take_along_axis(eigenvalues, order, axis=-1)
    v = np.take_along_axis(v, order[:, None, :], axis=-1)
    return eigenvalues, canonicalize_signs(v)


def sym_eig(a: np.ndarray) -> EigenResult:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise NonSquare(f"expected a 2-D matrix, got shape {a.shape}")
    vals, vecs = sym_eig_batch(a[None])
    return EigenResult(vals[0], vecs[0])


def gram(v: np.ndarray) -> np.ndarray:
    """Return ``V^T V`` for a matrix whose columns are vectors (works on stacks too)."""
    v = np.asarray(v, dtype=np.float64)
    _check_finite(v, "columns")
    g = np.swapaxes(v, -1, -2) @ v
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def matvec(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {x.shape}")
    return a @ x


def transpose_matvec(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or x.ndim != 1 or a.shape[0] != x.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape}^T by {x.shape}")
    return a.T @ x


def norm(x: np.ndarray) -> float:
    return float(np.sqrt(np.dot(x, x)))
