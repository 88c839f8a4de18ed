"""The assembled world model: encoder, transition and optional heads."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..diffcore import Module, Tensor, no_grad
from .config import ModelConfig
from .encoder import Encoder
from .heads import InHandClassifier, PositionProbe, inhand_decision
from .transition import make_transition


class WorldModel(Module):
    """Parameters are grouped as ``encoder.*``, ``transition.*``, ``inhand.*``
    and ``probe.*``; every group draws its initial weights from its own
    child generator of ``seed``."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        seq = np.random.SeedSequence(seed)
        rngs = [np.random.Generator(np.random.PCG64(s)) for s in seq.spawn(4)]
        self.encoder = Encoder(cfg, rngs[0])
        self.transition = make_transition(cfg, rngs[1])
        self.inhand = InHandClassifier(cfg, rngs[2])
        self.probe = PositionProbe(cfg, rngs[3])

    def world_parameters(self) -> dict[str, Tensor]:
        """Parameters trained by the contrastive objective."""
        out = self.encoder.named_parameters("encoder.")
        out.update(self.transition.named_parameters("transition."))
        return out

    # -- differentiable pieces ----------------------------------------------
    def encode(self, obs) -> Tensor:
        return self.encoder(obs)

    def step(self, z: Tensor, a) -> Tensor:
        if not isinstance(a, Tensor):
            a = Tensor(np.asarray(a, dtype=z.dtype))
        return self.transition(z, a)

    # -- inference helpers (no graph, frozen statistics) ----------------------
    def encode_np(self, obs: np.ndarray, batch: int = 1024) -> np.ndarray:
        obs = np.asarray(obs)
        single = obs.ndim == 4
        if single:
            obs = obs[None]
        with no_grad():
            out = np.concatenate([self.encoder(obs[i:i + batch]).data
                                  for i in range(0, len(obs), batch)])
        return out[0] if single else out

    def transition_np(self, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        z = np.asarray(z, np.float32)
        a = np.asarray(a, np.float32)
        with no_grad():
            return self.transition(Tensor(z), Tensor(a)).data

    def rollout(self, z0: np.ndarray, actions: Sequence[np.ndarray]) -> list[np.ndarray]:
        """Iterate the transition from ``z0`` (B, K, d_z) through ``actions``,
        each (B, 3); returns one latent per action."""
        if len(actions) == 0:
            raise ValueError("rollout needs at least one action")
        out, z = [], np.asarray(z0, np.float32)
        for a in actions:
            z = self.transition_np(z, a)
            out.append(z)
        return out

    def inhand_logits(self, z: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.inhand(Tensor(np.asarray(z, np.float32))).data

    def inhand_predict(self, z: np.ndarray) -> np.ndarray:
        return inhand_decision(self.inhand_logits(z))

    def probe_positions(self, z: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.probe(Tensor(np.asarray(z, np.float32))).data
