"""K-shot contrastive representation learning on instance subspaces."""

from .config import TrainConfig, load_config, parse_config
from .errors import KsclError
from .subspace import InstanceSubspace, TruncationPolicy, build_subspace, build_subspaces

__version__ = "0.1.0"

__all__ = [
    "InstanceSubspace",
    "KsclError",
    "TrainConfig",
    "TruncationPolicy",
    "build_subspace",
    "build_subspaces",
    "load_config",
    "parse_config",
]
