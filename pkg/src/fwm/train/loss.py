"""Contrastive objective and negative sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..diffcore import Tensor
from ..diffcore import ops

LR_SCHEDULES = ("constant", "anneal")
ANNEAL_FRACTION = 0.1  # share of steps spent decaying under "anneal"


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 1.0  # hinge margin
    sigma: float = 0.5  # distance scale
    batch_size: int = 128
    epochs: int = 50
    lr: float = 5e-4
    lr_schedule: str = "constant"  # or "anneal": constant, then a cosine decay to 0

    def __post_init__(self):
        for name in ("gamma", "sigma", "batch_size", "epochs", "lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}; expected one of {LR_SCHEDULES}")

    def lr_at(self, step: int, total: int) -> float:
        """Step size for update ``step`` (0-based) of ``total``."""
        start = total - max(1, round(ANNEAL_FRACTION * total))
        if self.lr_schedule == "constant" or step < start:
            return self.lr
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * (step - start) / (total - start)))


def contrastive_terms(z_t: Tensor, z_next: Tensor, z_pred: Tensor, z_neg: Tensor,
                      gamma: float, sigma: float) -> tuple[Tensor, Tensor, Tensor]:
    """Batch-mean (loss, positive term, negative distance) for (B, K, D) latents.

    Per sample: ``d(z_next, z_pred) + max(0, gamma - d(z_t, z_neg))`` with
    ``d(u, v) = sum_i ||u_i - v_i||^2 / (2 K sigma^2)``.
    """
    k = z_t.shape[1]
    scale = 1.0 / (2.0 * k * sigma ** 2)
    pos = (z_next - z_pred).square().sum(axis=(1, 2)) * scale
    neg = (z_t - z_neg).square().sum(axis=(1, 2)) * scale
    hinge = ops.maximum0(neg * -1.0 + gamma)
    return (pos + hinge).mean(), pos.mean(), neg.mean()


def contrastive_loss(z_t, z_next, z_pred, z_neg, cfg: LossConfig = LossConfig()) -> float:
    """Scalar loss for array latents (a single (K, D) instance or a (B, K, D) batch)."""
    arrs = [np.asarray(v, np.float64) for v in (z_t, z_next, z_pred, z_neg)]
    if arrs[0].ndim == 2:
        arrs = [a[None] for a in arrs]
    loss, _, _ = contrastive_terms(*(Tensor(a) for a in arrs), cfg.gamma, cfg.sigma)
    return float(loss.data)


def sample_negatives(batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """A uniform random permutation of batch indices; fixed points are allowed."""
    if batch_size < 2:
        raise ValueError("need a batch of at least 2 to draw negatives")
    return rng.permutation(batch_size)
