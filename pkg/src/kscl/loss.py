"""K-shot contrastive loss over projection-length scores, plus the one-shot baseline.

Scores are projection lengths ``s_n = ||W_n^T v||``; the probability of
candidate n is a temperature softmax over them and the loss is its negative
log-likelihood at the positive. Gradients flow to the query only: candidate
bases are constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidConfig, PositiveOutOfRange
from .subspace import InstanceSubspace, stack_bases

DEFAULT_TEMPERATURE = 0.2
GRAD_EPSILON = 1e-8
LENGTH_TOL = 1e-8


@dataclass(frozen=True)
class ContrastiveScores:
    positive_index: int
    lengths: np.ndarray
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        lengths = np.asarray(self.lengths, dtype=np.float64)
        object.__setattr__(self, "lengths", lengths)
        if not self.temperature > 0.0:
            raise InvalidConfig(f"temperature must be positive, got {self.temperature}")
        if lengths.ndim != 1 or lengths.size == 0:
            raise DimensionMismatch("lengths must be a non-empty vector")
        if np.any(lengths < 0.0) or np.any(lengths > 1.0 + LENGTH_TOL):
            raise InvalidConfig("projection lengths must lie in [0, 1]")
        if not 0 <= self.positive_index < lengths.size:
            raise PositiveOutOfRange(f"positive index {self.positive_index} not in [0, {lengths.size})")


@dataclass(frozen=True)
class LossOutput:
    loss: float
    probabilities: np.ndarray
    grad_wrt_query: np.ndarray


@dataclass(frozen=True)
class BatchLossOutput:
    """Mean loss over a batch; column 0 of ``probabilities`` is each query's own positive."""

    loss: float
    losses: np.ndarray
    probabilities: np.ndarray
    grad_wrt_queries: np.ndarray


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _nll(logits: np.ndarray, positive: np.ndarray | int) -> np.ndarray:
    top = np.max(logits, axis=-1, keepdims=True)
    lse = top[..., 0] + np.log(np.sum(np.exp(logits - top), axis=-1))
    pos = np.take_along_axis(logits, np.reshape(positive, np.shape(lse) + (1,)), axis=-1)[..., 0]
    return lse - pos


def kshot_probabilities(scores: ContrastiveScores) -> np.ndarray:
    return softmax(scores.lengths / scores.temperature)


def kshot_loss_and_grad(
    query: np.ndarray,
    candidates: Sequence[InstanceSubspace],
    positive_index: int,
    temperature: float = DEFAULT_TEMPERATURE,
) -> LossOutput:
    """Loss and query gradient for a single query against N candidate subspaces."""
    query = np.asarray(query, dtype=np.float64)
    if len(candidates) == 0:
        raise DimensionMismatch("at least one candidate subspace is required")
    if not 0 <= positive_index < len(candidates):
        raise PositiveOutOfRange(f"positive index {positive_index} not in [0, {len(candidates)})")
    if not temperature > 0.0:
        raise InvalidConfig(f"temperature must be positive, got {temperature}")
    bases = stack_bases(candidates)
    if query.ndim != 1 or query.shape[0] != bases.shape[1]:
        raise DimensionMismatch(f"query of shape {query.shape} against dimension {bases.shape[1]}")

    coef = np.einsum("ndl,d->nl", bases, query)
    lengths = np.linalg.norm(coef, axis=-1)
    logits = lengths / temperature
    probs = softmax(logits)
    loss = float(_nll(logits, positive_index))

    weight = probs.copy()
    weight[positive_index] -= 1.0
    weight /= temperature
    safe = np.where(lengths > GRAD_EPSILON, lengths, 1.0)
    weight = np.where(lengths > GRAD_EPSILON, weight / safe, 0.0)
    grad = np.einsum("ndl,nl->d", bases, coef * weight[:, None])
    return LossOutput(loss, probs, grad)


def batch_kshot_loss_and_grad(
    queries: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    temperature: float = DEFAULT_TEMPERATURE,
) -> BatchLossOutput:
    """Mean K-shot loss of B queries, each against its own positive plus shared negatives.

    ``positives`` is a padded (B, D, L) stack, ``negatives`` a padded (N, D, L')
    stack (N may be zero). The returned gradient is of the mean loss.
    """
    queries = np.asarray(queries, dtype=np.float64)
    b, d = queries.shape
    if positives.shape[:2] != (b, d):
        raise DimensionMismatch(f"positives {positives.shape} do not match queries {queries.shape}")
    if negatives.shape[0] and negatives.shape[1] != d:
        raise DimensionMismatch(f"negatives {negatives.shape} do not match dimension {d}")

    coef_pos = np.einsum("bdl,bd->bl", positives, queries)
    len_pos = np.linalg.norm(coef_pos, axis=-1)
    n_neg = negatives.shape[0]
    if n_neg:
        # (D, N*L) layout turns both contractions into plain matmuls
        flat = np.ascontiguousarray(negatives.transpose(1, 0, 2)).reshape(d, -1)
        coef_neg = (queries @ flat).reshape(b, n_neg, -1)
        len_neg = np.sqrt(np.sum(coef_neg * coef_neg, axis=-1))
    else:
        coef_neg = np.zeros((b, 0, 1))
        len_neg = np.zeros((b, 0))
    lengths = np.concatenate([len_pos[:, None], len_neg], axis=1)
    logits = lengths / temperature
    probs = softmax(logits)
    losses = _nll(logits, np.zeros(b, dtype=np.int64))

    weight = probs.copy()
    weight[:, 0] -= 1.0
    weight /= temperature * b
    ok = lengths > GRAD_EPSILON
    weight = np.where(ok, weight / np.where(ok, lengths, 1.0), 0.0)
    grad = np.einsum("bdl,bl->bd", positives, coef_pos * weight[:, :1])
    if n_neg:
        grad += (coef_neg * weight[:, 1:, None]).reshape(b, -1) @ flat.T
    return BatchLossOutput(float(np.mean(losses)), losses, probs, grad)


def oneshot_probabilities(query: np.ndarray, keys: np.ndarray, temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Softmax over inner-product similarities between the query and N key vectors (rows)."""
    query = np.asarray(query, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim != 2 or query.ndim != 1 or keys.shape[1] != query.shape[0]:
        raise DimensionMismatch(f"keys {keys.shape} incompatible with query {query.shape}")
    return softmax(keys @ query / temperature)


def oneshot_loss(
    query: np.ndarray,
    keys: np.ndarray,
    positive_index: int,
    temperature: float = DEFAULT_TEMPERATURE,
    absolute: bool = False,
) -> float:
    """InfoNCE over cosine scores; ``absolute=True`` scores with |cos| instead."""
    keys = np.asarray(keys, dtype=np.float64)
    if not 0 <= positive_index < keys.shape[0]:
        raise PositiveOutOfRange(f"positive index {positive_index} not in [0, {keys.shape[0]})")
    sims = keys @ np.asarray(query, dtype=np.float64)
    if absolute:
        sims = np.abs(sims)
    return float(_nll(sims / temperature, positive_index))
