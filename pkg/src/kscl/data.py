"""Synthetic clustered dataset and the stochastic vector augmentation family.

Augmentations are vector-space stand-ins for image transforms: random
coordinate-plane rotations, scale jitter, additive Gaussian noise and
coordinate masking, applied in that order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import InvalidConfig
from .seeding import keyed_draws, stream

MAX_ROTATION = np.pi / 8


@dataclass(frozen=True)
class Instance:
    id: int
    features: np.ndarray
    latent_class: int


@dataclass
class Dataset:
    """Column-oriented instance store: ``features`` is (N, F), ``ids`` and ``labels`` are (N,)."""

    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> Instance:
        return Instance(int(self.ids[i]), self.features[i], int(self.labels[i]))

    def __iter__(self) -> Iterator[Instance]:
        return (self[i] for i in range(len(self)))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class AugmentationConfig:
    k_shots: int = 5
    noise_sigma: float = 0.6
    mask_fraction: float = 0.25
    scale_jitter: tuple[float, float] = (0.8, 1.2)
    rotation_pairs: int = 16
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.scale_jitter
        if self.k_shots < 1:
            raise InvalidConfig(f"k_shots must be >= 1, got {self.k_shots}", key="k_shots")
        if self.noise_sigma < 0:
            raise InvalidConfig(f"noise_sigma must be >= 0, got {self.noise_sigma}", key="noise_sigma")
        if not 0.0 <= self.mask_fraction < 1.0:
            raise InvalidConfig(f"mask_fraction must lie in [0, 1), got {self.mask_fraction}", key="mask_fraction")
        if not 0.0 < lo <= hi:
            raise InvalidConfig(f"scale_jitter needs 0 < lo <= hi, got {self.scale_jitter}", key="scale_jitter")
        if self.rotation_pairs < 0:
            raise InvalidConfig(f"rotation_pairs must be >= 0, got {self.rotation_pairs}", key="rotation_pairs")
        if self.seed < 0:
            raise InvalidConfig(f"seed must be >= 0, got {self.seed}", key="seed")


@dataclass(frozen=True)
class AugmentationBatch:
    instance_id: int
    query_view: np.ndarray
    key_views: np.ndarray


def generate_dataset(
    num_classes: int,
    instances_per_class: int,
    feature_dim: int,
    class_separation: float,
    seed: int = 0,
) -> Dataset:
    """Gaussian clusters: class means on a sphere of radius ``class_separation``, unit noise."""
    if num_classes < 1 or instances_per_class < 1 or feature_dim < 1:
        raise InvalidConfig("class count, instances per class and feature_dim must all be >= 1")
    if not class_separation > 0:
        raise InvalidConfig(f"class_separation must be positive, got {class_separation}", key="class_separation")
    if seed < 0:
        raise InvalidConfig(f"seed must be >= 0, got {seed}", key="seed")
    rng = stream(seed, "dataset")
    means = rng.normal(size=(num_classes, feature_dim))
    means *= class_separation / np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.repeat(np.arange(num_classes), instances_per_class)
    features = means[labels] + rng.normal(size=(labels.size, feature_dim))
    return Dataset(np.arange(labels.size, dtype=np.int64), features, labels.astype(np.int64), num_classes)


def _view_randomness(config: AugmentationConfig, f: int, instance_id: int, step: int, draw_index: int):
    r = config.rotation_pairs
    # fixed layout: r first-axis, r second-axis, r angle, 1 scale, f mask-order uniforms
    return keyed_draws(config.seed, "augment", (instance_id, step, draw_index), 3 * r + 1 + f, f)


def augment_views(
    features: np.ndarray,
    instance_ids: Sequence[int],
    draw_indices: Sequence[int],
    config: AugmentationConfig,
    step: int = 0,
) -> np.ndarray:
    """Augment M rows of ``features`` at once; row m uses the stream of (instance_ids[m], step, draw_indices[m]).

    Every row gets exactly what ``augment`` would give it alone.
    """
    x = np.array(features, dtype=np.float64)
    m, f = x.shape
    r = config.rotation_pairs
    if r and f < 2:
        raise InvalidConfig("rotations need at least two feature coordinates", key="rotation_pairs")
    if m == 0:
        return x
    draws = [_view_randomness(config, f, i, step, d) for i, d in zip(instance_ids, draw_indices)]
    u = np.stack([d[0] for d in draws])
    z = np.stack([d[1] for d in draws])

    rows = np.arange(m)
    if r:
        first = np.minimum((u[:, :r] * f).astype(np.int64), f - 1)
        second = np.minimum((u[:, r : 2 * r] * (f - 1)).astype(np.int64), f - 2)
        second += second >= first
        theta = MAX_ROTATION * (2.0 * u[:, 2 * r : 3 * r] - 1.0)
        cos, sin = np.cos(theta), np.sin(theta)
        # sequential: later planes may share a coordinate with earlier ones
        for t in range(r):
            xi = x[rows, first[:, t]]
            xj = x[rows, second[:, t]]
            x[rows, first[:, t]] = cos[:, t] * xi - sin[:, t] * xj
            x[rows, second[:, t]] = sin[:, t] * xi + cos[:, t] * xj
    lo, hi = config.scale_jitter
    if hi > lo:
        x *= (lo + (hi - lo) * u[:, 3 * r])[:, None]
    elif lo != 1.0:
        x *= lo
    if config.noise_sigma > 0:
        x += config.noise_sigma * z
    n_mask = int(round(config.mask_fraction * f))
    if n_mask:
        masked = np.argsort(u[:, 3 * r + 1 :], axis=1, kind="stable")[:, :n_mask]
        x[rows[:, None], masked] = 0.0
    return x


def augment(instance: Instance, config: AugmentationConfig, draw_index: int, step: int = 0) -> np.ndarray:
    """One augmented view: plane rotations, scale jitter, Gaussian noise, then masking."""
    return augment_views(np.asarray(instance.features)[None], [instance.id], [draw_index], config, step)[0]


def make_batch(instances: Sequence[Instance], config: AugmentationConfig, step: int = 0) -> list[AugmentationBatch]:
    """K key views (draws 0..K-1) and one query view (draw K) per instance."""
    k = config.k_shots
    if not instances:
        return []
    features = np.repeat(np.stack([inst.features for inst in instances]), k + 1, axis=0)
    ids = np.repeat([inst.id for inst in instances], k + 1)
    draws = np.tile(np.arange(k + 1), len(instances))
    views = augment_views(features, ids, draws, config, step).reshape(len(instances), k + 1, -1)
    return [AugmentationBatch(inst.id, views[i, k], views[i, :k]) for i, inst in enumerate(instances)]


def batch_arrays(batches: Sequence[AugmentationBatch]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a batch into key views (B, K, F) and query views (B, F)."""
    return np.stack([b.key_views for b in batches]), np.stack([b.query_view for b in batches])
