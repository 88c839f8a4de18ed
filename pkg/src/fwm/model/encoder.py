"""Shared per-object convolutional encoder."""
from __future__ import annotations

import numpy as np

from ..diffcore import BatchNorm, Conv2d, LayerNorm, Linear, Module, ShapeError, Tensor
from ..diffcore import ops
from .config import ModelConfig


class Encoder(Module):
    """Conv(32)-BN-ReLU, Conv(64)-BN-ReLU, Conv(64), average pool, then
    Linear-ReLU, Linear-LayerNorm-ReLU, Linear to ``d_z``.  Applied to every
    slot with the same weights."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.channels = np.array(cfg.channels)
        c = len(cfg.channels)
        self.conv1 = Conv2d(c, 32, 5, 2, 1, rng, name="encoder.conv1")
        self.bn1 = BatchNorm(32, name="encoder.bn1")
        self.conv2 = Conv2d(32, 64, 5, 2, 1, rng, name="encoder.conv2")
        self.bn2 = BatchNorm(64, name="encoder.bn2")
        self.conv3 = Conv2d(64, 64, 5, 2, 1, rng, name="encoder.conv3")
        h = cfg.encoder_hidden
        self.fc1 = Linear(64, h, rng, name="encoder.fc1")
        self.fc2 = Linear(h, h, rng, name="encoder.fc2")
        self.ln = LayerNorm(h, name="encoder.ln")
        self.fc3 = Linear(h, cfg.d_z, rng, name="encoder.fc3")

    def forward(self, obs: np.ndarray | Tensor) -> Tensor:
        """(B, K, C, H, W) observations -> (B, K, d_z) latents.

        Arrays may carry all 14 channels (the ablation mask is applied here);
        Tensors must already match the encoder's channel count.
        """
        if not isinstance(obs, Tensor):
            x = np.asarray(obs)
            if x.ndim == 5 and x.shape[2] == 14 and len(self.channels) != 14:
                x = x[:, :, self.channels]
            obs = Tensor(np.ascontiguousarray(x, dtype=np.float32))
        if obs.ndim != 5:
            raise ShapeError(f"encoder: expected (B, K, C, H, W) observations, got {obs.shape}")
        if obs.shape[2] != len(self.channels):
            raise ShapeError(f"encoder: got {obs.shape[2]} channels, expected {len(self.channels)}")
        b, k = obs.shape[:2]
        h = obs.reshape(b * k, *obs.shape[2:])
        h = ops.relu(self.bn1(self.conv1(h)))
        h = ops.relu(self.bn2(self.conv2(h)))
        h = ops.global_avg_pool2d(self.conv3(h))
        h = ops.relu(self.fc1(h))
        h = ops.relu(self.ln(self.fc2(h)))
        return self.fc3(h).reshape(b, k, -1)
