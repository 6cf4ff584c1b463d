"""Flat, typed experiment configuration.

Config files are ``key = value`` lines; ``#`` starts a comment. Lists are
comma-separated, booleans are ``true``/``false``, strings may be quoted.
Unknown keys are rejected so a typo in an ablation grid fails loudly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .data import AugmentationConfig
from .errors import InvalidConfig, UnknownConfigKey
from .subspace import TruncationPolicy


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    # dataset
    num_classes: int = 10
    instances_per_class: int = 200
    feature_dim: int = 64
    class_separation: float = 3.0
    dataset_path: str = ""
    # augmentation / subspaces
    k_shots: int = 5
    rho: float = 0.4
    rank_epsilon: float = 1e-10
    noise_sigma: float = 0.6
    mask_fraction: float = 0.25
    scale_jitter_lo: float = 0.8
    scale_jitter_hi: float = 1.2
    rotation_pairs: int = 16
    # encoder
    hidden_dims: tuple[int, ...] = (128, 64)
    embed_dim: int = 32
    # optimisation
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.03
    cosine_decay: bool = True
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    temperature: float = 0.2
    queue_capacity: int = 1024
    momentum: float = 0.999
    # linear probe
    probe_epochs: int = 300
    probe_lr: float = 0.5
    probe_split: float = 0.8
    checkpoint: str = ""
    # ablation grid
    sweep_k: tuple[int, ...] = (1, 3, 5)
    sweep_rho: tuple[float, ...] = (0.4, 0.9)
    sweep_seeds: tuple[int, ...] = (0, 1, 2)
    jobs: int = 1
    # basis visualisation
    viz_instance: int = 0

    def __post_init__(self):
        positive_ints = [
            "num_classes", "instances_per_class", "feature_dim", "k_shots", "embed_dim",
            "epochs", "batch_size", "queue_capacity", "probe_epochs", "jobs",
        ]  # fmt: skip
        for key in positive_ints:
            if getattr(self, key) < 1:
                raise InvalidConfig(f"{key} must be >= 1, got {getattr(self, key)}", key=key)
        for key in ("class_separation", "temperature", "rank_epsilon", "lr", "probe_lr"):
            if not getattr(self, key) > 0:
                if key == "lr" and self.lr == 0:
                    continue  # a frozen optimizer is allowed
                raise InvalidConfig(f"{key} must be positive, got {getattr(self, key)}", key=key)
        if self.seed < 0 or any(s < 0 for s in self.sweep_seeds):
            raise InvalidConfig("seeds must be non-negative", key="seed")
        if not 0 < self.rho <= 1:
            raise InvalidConfig(f"rho must lie in (0, 1], got {self.rho}", key="rho")
        if any(not 0 < r <= 1 for r in self.sweep_rho):
            raise InvalidConfig("sweep_rho entries must lie in (0, 1]", key="sweep_rho")
        if not 0 <= self.momentum < 1:
            raise InvalidConfig(f"momentum must lie in [0, 1), got {self.momentum}", key="momentum")
        if not 0 <= self.sgd_momentum < 1:
            raise InvalidConfig(f"sgd_momentum must lie in [0, 1), got {self.sgd_momentum}", key="sgd_momentum")
        if self.weight_decay < 0:
            raise InvalidConfig("weight_decay must be >= 0", key="weight_decay")
        if not 0 < self.probe_split < 1:
            raise InvalidConfig("probe_split must lie in (0, 1)", key="probe_split")
        if self.k_shots > self.embed_dim or any(k > self.embed_dim for k in self.sweep_k):
            raise InvalidConfig("k_shots cannot exceed embed_dim", key="k_shots")
        if any(k < 1 for k in self.sweep_k) or not self.sweep_k or not self.sweep_rho or not self.sweep_seeds:
            raise InvalidConfig("sweep lists must be non-empty with k >= 1", key="sweep_k")
        if any(h < 1 for h in self.hidden_dims):
            raise InvalidConfig("hidden_dims entries must be >= 1", key="hidden_dims")
        if self.viz_instance < 0:
            raise InvalidConfig("viz_instance must be >= 0", key="viz_instance")
        # remaining field checks live with the objects that own them
        self.augmentation()
        self.policy()

    @property
    def encoder_dims(self) -> list[int]:
        return [self.feature_dim, *self.hidden_dims, self.embed_dim]

    def augmentation(self) -> AugmentationConfig:
        return AugmentationConfig(
            k_shots=self.k_shots,
            noise_sigma=self.noise_sigma,
            mask_fraction=self.mask_fraction,
            scale_jitter=(self.scale_jitter_lo, self.scale_jitter_hi),
            rotation_pairs=self.rotation_pairs,
            seed=self.seed,
        )

    def policy(self) -> TruncationPolicy:
        return TruncationPolicy(self.rho, self.rank_epsilon)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    def content_hash(self) -> str:
        """Git blob hash of the canonical JSON of the resolved config."""
        payload = canonical_json(self.to_dict())
        return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    text = raw.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(f"expected true/false, got {text!r}")
            return low == "true"
        if kind == "str":
            if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
                text = text[1:-1]
            return text
        if kind == "tuple[int, ...]":
            return tuple(int(p) for p in text.split(",") if p.strip())
        if kind == "tuple[float, ...]":
            return tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise InvalidConfig(f"bad value for {key!r}: {exc}", key=key) from None
    raise AssertionError(f"unhandled field type {kind} for {key}")


def parse_config(text: str, overrides: dict[str, Any] | None = None) -> TrainConfig:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {lineno}: expected 'key = value'", line=lineno)
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise UnknownConfigKey(f"line {lineno}: unknown key {key!r}", key=key)
        if key in values:
            raise InvalidConfig(f"line {lineno}: duplicate key {key!r}", key=key)
        values[key] = _coerce(key, raw)
    values.update(overrides or {})
    return TrainConfig(**values)


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> TrainConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, overrides)


def format_config(config: TrainConfig) -> str:
    """Render a config back into the file format (round-trips through ``parse_config``)."""
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, list):
            value = ", ".join(repr(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
