"""Instance subspaces built from K-shot key embeddings.

A subspace is spanned by the unit-norm embeddings of one instance's K
augmented views. The orthonormal basis comes from the K x K dual Gram matrix
``V^T V``: an eigenpair ``(lam, u)`` of it maps to the D-dimensional basis
vector ``V u / sqrt(lam)``. Only the leading eigenvectors covering a fraction
``rho`` of the eigenvalue mass are kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from . import linalg
from .errors import (
    AllZeroSpectrum,
    DimensionMismatch,
    EmptyKeys,
    InvalidConfig,
    KExceedsDim,
    NonFinite,
    NonUnitKey,
)

UNIT_TOL = 1e-8
# cumulative-mass comparison slack; 0.6 + 0.3 < 0.9 in binary floating point
RHO_SLACK = 1e-12
ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class TruncationPolicy:
    rho: float = 1.0
    rank_epsilon: float = 1e-10

    def __post_init__(self):
        if not (0.0 < self.rho <= 1.0):
            raise InvalidConfig(f"rho must lie in (0, 1], got {self.rho}")
        if not self.rank_epsilon > 0.0:
            raise InvalidConfig(f"rank_epsilon must be positive, got {self.rank_epsilon}")


@dataclass(frozen=True, eq=False)
class InstanceSubspace:
    """Truncated orthonormal basis (D x L) of one instance's key span."""

    basis: np.ndarray
    retained_eigenvalues: np.ndarray
    total_eigenmass: float
    tag: Hashable = None
    spectrum: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]


def select_rank(eigenvalues: Sequence[float], policy: TruncationPolicy) -> int:
    """Smallest L whose leading eigenvalues cover ``rho`` of the (numerically nonzero) mass."""
    lam = np.maximum(np.asarray(eigenvalues, dtype=np.float64), 0.0)
    kept = lam[lam > policy.rank_epsilon]
    if kept.size == 0:
        raise AllZeroSpectrum("every eigenvalue is at or below rank_epsilon")
    cum = np.cumsum(kept)
    target = policy.rho * cum[-1] * (1.0 - RHO_SLACK)
    return int(np.argmax(cum >= target)) + 1


def _orthonormalize(w: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(w)
    return q * np.where(np.diagonal(r) < 0.0, -1.0, 1.0)


def build_subspaces(
    keys: np.ndarray,
    policy: TruncationPolicy,
    tags: Sequence[Hashable] | None = None,
) -> list[InstanceSubspace]:
    """Build one subspace per instance from keys of shape (B, K, D)."""
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim != 3:
        raise DimensionMismatch(f"expected keys of shape (B, K, D), got {keys.shape}")
    batch, k, d = keys.shape
    if k == 0:
        raise EmptyKeys("at least one key view is required")
    if k > d:
        raise KExceedsDim(f"K={k} exceeds embedding dimension D={d}")
    if not np.all(np.isfinite(keys)):
        raise NonFinite("key embeddings contain NaN or Inf")
    norms = np.linalg.norm(keys, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise NonUnitKey(f"key norm deviates from 1 by {float(np.max(np.abs(norms - 1.0))):.3e}")
    if tags is None:
        tags = [None] * batch

    g = linalg.gram(np.swapaxes(keys, 1, 2))
    lam, u = linalg.sym_eig_batch(g)
    lam = np.maximum(lam, 0.0)
    # columns with lam <= eps are never kept, so the guarded divisor only avoids 0/0
    scale = 1.0 / np.sqrt(np.maximum(lam, policy.rank_epsilon))
    full = np.einsum("bkd,bkj->bdj", keys, u) * scale[:, None, :]

    out = []
    for i in range(batch):
        rank = select_rank(lam[i], policy)
        basis = full[i, :, :rank].copy()
        if np.max(np.abs(basis.T @ basis - np.eye(rank))) > ORTHO_TOL:
            basis = _orthonormalize(basis)
        basis.setflags(write=False)
        retained = lam[i, :rank].copy()
        retained.setflags(write=False)
        spectrum = lam[i].copy()
        spectrum.setflags(write=False)
        out.append(InstanceSubspace(basis, retained, float(np.sum(lam[i])), tags[i], spectrum))
    return out


def build_subspace(keys: np.ndarray, policy: TruncationPolicy, tag: Hashable = None) -> InstanceSubspace:
    """Build the subspace spanned by K unit key embeddings given as rows of a (K, D) array."""
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim != 2:
        raise DimensionMismatch(f"expected keys of shape (K, D), got {keys.shape}")
    return build_subspaces(keys[None], policy, [tag])[0]


def _check_query(s: InstanceSubspace, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != s.dim:
        raise DimensionMismatch(f"query of shape {v.shape} against subspace of dimension {s.dim}")
    return v


def coefficients(s: InstanceSubspace, v: np.ndarray) -> np.ndarray:
    return s.basis.T @ _check_query(s, v)


def projection_length(s: InstanceSubspace, v: np.ndarray) -> float:
    return float(np.linalg.norm(coefficients(s, v)))


def projection_distance(s: InstanceSubspace, v: np.ndarray) -> float:
    v = _check_query(s, v)
    c = s.basis.T @ v
    return float(np.sqrt(max(0.0, float(v @ v) - float(c @ c))))


def project(s: InstanceSubspace, v: np.ndarray) -> np.ndarray:
    return s.basis @ coefficients(s, v)


def stack_bases(subspaces: Sequence[InstanceSubspace], width: int | None = None) -> np.ndarray:
    """Zero-pad bases to a common rank and stack them as (N, D, width).

    Zero columns add nothing to ``||W^T v||`` so padded stacks score exactly
    like the individual bases.
    """
    if not subspaces:
        return np.zeros((0, 0, width or 0))
    d = subspaces[0].dim
    width = width or max(s.rank for s in subspaces)
    out = np.zeros((len(subspaces), d, width))
    for i, s in enumerate(subspaces):
        if s.dim != d:
            raise DimensionMismatch(f"subspace {i} has dimension {s.dim}, expected {d}")
        out[i, :, : s.rank] = s.basis
    return out
