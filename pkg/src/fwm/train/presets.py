"""Named scale presets for data generation and training."""
from __future__ import annotations

from dataclasses import dataclass

from .loss import LossConfig


@dataclass(frozen=True)
class Preset:
    transitions: int
    loss: LossConfig


PRESETS = {
    # full-scale settings of the original experiments
    "paper": Preset(200_000, LossConfig(batch_size=256, epochs=200, lr=5e-5)),
    # laptop-scale analogue: 10x less data, 4x fewer epochs, a larger step
    # size that is annealed to zero over the last epochs
    "desk": Preset(20_000, LossConfig(batch_size=128, epochs=50, lr=5e-4, lr_schedule="anneal")),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
