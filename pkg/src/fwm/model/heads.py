"""Small supervised heads on top of single latent factors."""
from __future__ import annotations

import numpy as np

from ..diffcore import MLP, Module, Tensor
from .config import ModelConfig


class _Standardised(Module):
    """Fixed per-feature input standardisation, set once from training latents."""

    def _init_stats(self, d: int) -> None:
        self.in_mean = np.zeros(d, np.float32)
        self.in_std = np.ones(d, np.float32)

    def fit_input_stats(self, z: np.ndarray) -> None:
        flat = np.asarray(z, np.float32).reshape(-1, self.in_mean.shape[0])
        self.in_mean[:] = flat.mean(axis=0)
        self.in_std[:] = np.maximum(flat.std(axis=0), 1e-6)

    def _standardise(self, z: Tensor) -> Tensor:
        return (z - self.in_mean.astype(z.dtype)) * (1.0 / self.in_std).astype(z.dtype)


class InHandClassifier(_Standardised):
    """Per-factor logit that the object is held; one hidden layer of 64."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self._init_stats(cfg.d_z)
        self.mlp = MLP([cfg.d_z, cfg.inhand_hidden, 1], rng, name="inhand")

    def forward(self, z: Tensor) -> Tensor:
        return self.mlp(self._standardise(z)).reshape(z.shape[:-1])


def inhand_decision(logits: np.ndarray) -> np.ndarray:
    """Threshold sigmoid(logit) at 0.5; a logit of exactly 0 predicts on-ground (0)."""
    return (np.asarray(logits) > 0).astype(np.uint8)


class PositionProbe(_Standardised):
    """Per-factor (x, y, z) regression in cm; two hidden layers.  The network
    works in workspace-normalised units and a fixed affine map returns cm."""

    scale = 15.0

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        h = cfg.probe_hidden
        self._init_stats(cfg.d_z)
        self.mlp = MLP([cfg.d_z, h, h, 3], rng, name="probe")

    def forward(self, z: Tensor) -> Tensor:
        return self.mlp(self._standardise(z)) * self.scale + self.scale
