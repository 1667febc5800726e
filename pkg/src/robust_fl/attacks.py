"""
attacks.py
Date: 05/10/2026
--------------------------------------------------------#
Description: Byzantine client behaviour used by the simulator.

- forge_outlier_update: replace the update with Gaussian noise N(mu, sigma^2)
- inject_noise: add Gaussian noise to a genuinely trained update
- flip_labels: relabel a client's data before it trains

Notes:
Each function takes its own numpy Generator; the harness hands every client
a private stream so attacks never share randomness across clients.
--------------------------------------------------------#
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Mapping, Optional

import numpy as np

from .data import Dataset

logger = logging.getLogger(__name__)

ATTACK_KINDS = ("none", "large_outlier", "noise_injection", "label_flipping")

DEFAULT_SIGMA = {
    "none": 0.0,
    "large_outlier": 10.0,
    "noise_injection": 1.0,
    "label_flipping": 0.0,
}

# digits 0-4 flipped onto 9-5, one direction only
MNIST_FLIP_MAP: Dict[int, int] = {0: 9, 1: 8, 2: 7, 3: 6, 4: 5}
BINARY_FLIP_MAP: Dict[int, int] = {0: 1, 1: 0}

FLIP_PRESETS = {"mnist": MNIST_FLIP_MAP, "binary": BINARY_FLIP_MAP}


@dataclass
class AttackSpec:
    """
    How Byzantine clients misbehave.

    sigma=None picks the default for the kind (10 for large_outlier, 1 for
    noise_injection).
    """

    kind: str = "none"
    sigma: Optional[float] = None
    mu: float = 0.0
    label_map: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"attack kind must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if self.sigma is None:
            self.sigma = DEFAULT_SIGMA[self.kind]
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        self.label_map = {int(k): int(v) for k, v in self.label_map.items()}
        if len(set(self.label_map.values())) != len(self.label_map):
            raise ValueError(f"label_map must be injective, got {self.label_map}")
        if self.kind == "label_flipping" and not self.label_map:
            raise ValueError("label_flipping needs a non-empty label_map")

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "AttackSpec":
        """
        Build from a config table; label_map may be a preset name ("mnist", "binary").
        """
        values = dict(raw)
        label_map = values.pop("label_map", {})
        if isinstance(label_map, str):
            if label_map not in FLIP_PRESETS:
                raise ValueError(f"Unknown label_map preset {label_map!r}; choose from {sorted(FLIP_PRESETS)}")
            label_map = FLIP_PRESETS[label_map]
        return cls(label_map=dict(label_map), **values)

    def to_dict(self) -> Dict[str, Any]:
        # TOML keys must be strings
        return {
            "kind": self.kind,
            "sigma": self.sigma,
            "mu": self.mu,
            "label_map": {str(k): v for k, v in sorted(self.label_map.items())},
        }


def forge_outlier_update(d: int, spec: AttackSpec, rng: np.random.Generator) -> np.ndarray:
    """
    A d-dimensional update with every coordinate drawn from N(mu, sigma^2).

    The honest update is never consulted, so nothing of it leaks into the result.
    """
    if spec.kind != "large_outlier":
        raise ValueError(f"forge_outlier_update needs kind 'large_outlier', got {spec.kind!r}")
    return rng.normal(loc=spec.mu, scale=spec.sigma, size=d)


def inject_noise(update: np.ndarray, spec: AttackSpec, rng: np.random.Generator) -> np.ndarray:
    """Return update + eps with eps_k ~ N(mu, sigma^2) independently."""
    if spec.kind != "noise_injection":
        raise ValueError(f"inject_noise needs kind 'noise_injection', got {spec.kind!r}")
    update = np.asarray(update, dtype=float)
    return update + rng.normal(loc=spec.mu, scale=spec.sigma, size=update.shape)


def flip_labels(dataset: Dataset, label_map: Mapping[int, int]) -> Dataset:
    """
    Relabel a dataset with label_map applied simultaneously (no chained flips).

    Labels outside the map's domain are left alone; features are shared, not copied.

    Raises:
        ValueError: if a source or target label is outside 0..C-1.
    """
    n_classes = dataset.n_classes
    for src, dst in label_map.items():
        if not 0 <= int(src) < n_classes:
            raise ValueError(f"label_map source {src} outside label alphabet 0..{n_classes - 1}")
        if not 0 <= int(dst) < n_classes:
            raise ValueError(f"label_map target {dst} outside label alphabet 0..{n_classes - 1}")

    if not label_map:
        return dataset

    original = dataset.labels
    flipped = original.copy()
    for src, dst in label_map.items():
        flipped[original == int(src)] = int(dst)
    return replace(dataset, labels=flipped)
