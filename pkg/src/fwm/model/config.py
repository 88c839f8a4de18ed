"""Model hyperparameters and the action encoding."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..sim.state import WORKSPACE

RGB_CHANNELS = (0, 1, 2, 7, 8, 9)
GRID_CHANNELS = (3, 4, 5, 6, 10, 11, 12, 13)


@dataclass(frozen=True)
class ModelConfig:
    d_z: int = 32
    d_a: int = 3
    num_layers: int = 2
    hidden: int = 512
    edge_dim: int = 512
    encoder_hidden: int = 256
    inhand_hidden: int = 64
    probe_hidden: int = 256
    edge_actions: bool = True
    use_rgb: bool = True
    use_coords: bool = True
    factorized: bool = True
    max_objects: int = 8  # slot count of the non-factorized ablation

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.d_z <= 0 or self.hidden <= 0 or self.edge_dim <= 0:
            raise ValueError("d_z, hidden and edge_dim must be positive")
        if self.d_a != 3:
            raise ValueError("actions are encoded as (kind, x, y); d_a must be 3")
        if not (self.use_rgb or self.use_coords):
            raise ValueError("at least one of use_rgb / use_coords must be enabled")

    @property
    def channels(self) -> tuple[int, ...]:
        keep = (RGB_CHANNELS if self.use_rgb else ()) + (GRID_CHANNELS if self.use_coords else ())
        return tuple(sorted(keep))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def encode_actions(kind, x, y) -> np.ndarray:
    """(kind in {0 pick, 1 place}, x cm, y cm) -> (N, 3) vectors in [-1, 1]."""
    kind = np.asarray(kind, np.float32)
    half = WORKSPACE / 2
    return np.stack([2 * kind - 1, np.asarray(x, np.float32) / half - 1,
                     np.asarray(y, np.float32) / half - 1], axis=-1).astype(np.float32)


def decode_actions(vec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode_actions`; returns (..., 3) of (kind, x, y)."""
    vec = np.asarray(vec, np.float64)
    half = WORKSPACE / 2
    return np.stack([(vec[..., 0] + 1) / 2, (vec[..., 1] + 1) * half, (vec[..., 2] + 1) * half], -1)
