"""Basis composition: which augmented inputs make up each retained subspace direction.

For a retained basis vector ``w_i`` of an instance's key subspace, the weight
on view k is the inner product ``w_i . v_k`` with that view's embedding. The
squared weights of basis i sum to its eigenvalue ``lam_i``, so the retained
weight energy over the total eigenmass is exactly the preserved fraction.
Mirroring ``w_i = sum_k (w_i . v_k) v_k / lam_i``, the synthesized input is
the same combination of the raw augmented inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import AugmentationConfig, Instance, augment_views
from .encoder import MlpParams, forward
from .subspace import TruncationPolicy, build_subspace


@dataclass(frozen=True)
class BasisComposition:
    instance_id: int
    eigenvalues: np.ndarray  # (L,) retained
    total_eigenmass: float
    weights: np.ndarray  # (L, K): w_i . v_k
    synthesized: np.ndarray  # (L, F)
    views: np.ndarray  # (K, F) raw augmented inputs
    spectrum: np.ndarray  # (K,) full Gram spectrum

    @property
    def unit_weights(self) -> np.ndarray:
        """Weights divided by sqrt(lam_i): the unit eigenvectors of the K x K Gram matrix."""
        return self.weights / np.sqrt(self.eigenvalues)[:, None]

    @property
    def energy_ratio(self) -> float:
        return float(np.sum(self.weights**2) / self.total_eigenmass)

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "rank": int(self.eigenvalues.size),
            "total_eigenmass": self.total_eigenmass,
            "energy_ratio": self.energy_ratio,
            "bases": [
                {
                    "eigenvalue": float(lam),
                    "weights": w.tolist(),
                    "unit_weights": u.tolist(),
                    "synthesized_input": x.tolist(),
                }
                for lam, w, u, x in zip(self.eigenvalues, self.weights, self.unit_weights, self.synthesized)
            ],
        }


def basis_composition(
    key_encoder: MlpParams,
    instance: Instance,
    augmentation: AugmentationConfig,
    policy: TruncationPolicy,
) -> BasisComposition:
    k = augmentation.k_shots
    feats = np.repeat(np.asarray(instance.features)[None], k, axis=0)
    views = augment_views(feats, [instance.id] * k, range(k), augmentation)
    keys, _ = forward(key_encoder, views)
    sub = build_subspace(keys, policy, tag=instance.id)
    weights = (keys @ sub.basis).T
    lam = np.asarray(sub.retained_eigenvalues)
    synthesized = weights @ views / lam[:, None]
    return BasisComposition(instance.id, lam, sub.total_eigenmass, weights, synthesized, views, np.asarray(sub.spectrum))


def composition_rows(comp: BasisComposition) -> list[list]:
    """CSV rows: instance, basis index, eigenvalue, K weights, F synthesized coordinates."""
    return [
        [comp.instance_id, i, repr(float(lam))] + [repr(float(x)) for x in w] + [repr(float(x)) for x in s]
        for i, (lam, w, s) in enumerate(zip(comp.eigenvalues, comp.weights, comp.synthesized))
    ]


def composition_header(k: int, f: int) -> list[str]:
    return ["instance", "basis", "eigenvalue"] + [f"w{j}" for j in range(k)] + [f"x{j}" for j in range(f)]
