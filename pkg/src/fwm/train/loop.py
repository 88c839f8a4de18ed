"""Training loops: contrastive world model, position probe, in-hand classifier."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..diffcore import ParamSet, Tensor, adam_step, no_grad
from ..diffcore import ops
from ..model import ModelConfig, WorldModel, encode_actions
from ..sim.dataset import Dataset
from .loss import LossConfig, contrastive_terms, sample_negatives


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch = epoch, batch


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    pos_term: float
    neg_term: float


@dataclass
class TrainResult:
    model: WorldModel
    metrics: list[EpochMetrics] = field(default_factory=list)


class TransitionTable:
    """Flat (obs, action, next_obs) access over every transition of a dataset."""

    def __init__(self, data: Dataset):
        if data.num_transitions == 0:
            raise ValueError("dataset has no transitions")
        self.data = data
        self.episode, self.t = data.transitions()
        acts = np.concatenate([ep.actions for ep in data])
        self.actions = encode_actions(acts[:, 0], acts[:, 1], acts[:, 2])

    def __len__(self) -> int:
        return len(self.t)

    def batch(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        obs = np.stack([self.data[e].obs[t] for e, t in zip(self.episode[idx], self.t[idx])])
        nxt = np.stack([self.data[e].obs[t + 1] for e, t in zip(self.episode[idx], self.t[idx])])
        return obs, self.actions[idx], nxt


def contrastive_objective(model: WorldModel, obs, next_obs, actions, perm: np.ndarray,
                          cfg: LossConfig):
    """Loss graph for one batch.  Current and next observations are encoded in
    a single pass so they share normalisation statistics; negatives are the
    current latents permuted across the batch."""
    b = obs.shape[0]
    both = (ops.concat([obs, next_obs], axis=0) if isinstance(obs, Tensor)
            else np.concatenate([obs, next_obs]))
    z = model.encode(both)
    z_t, z_next = z[:b], z[b:]
    z_pred = model.step(z_t, actions)
    z_neg = ops.gather(z_t, perm, axis=0)
    return contrastive_terms(z_t, z_next, z_pred, z_neg, cfg.gamma, cfg.sigma)


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    out = [order[i:i + size] for i in range(0, n, size)]
    if len(out) > 1 and len(out[-1]) < 2:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def _batch_count(n: int, size: int) -> int:
    count = -(-n // size)
    return count - 1 if count > 1 and n % size == 1 else count


def train_world_model(data: Dataset, model_cfg: ModelConfig, loss_cfg: LossConfig, seed: int,
                      metrics_path: str | Path | None = None,
                      log: Callable[[str], None] | None = None) -> TrainResult:
    """Adam on encoder + transition parameters with per-epoch seeded shuffles.

    The model is initialised from ``seed`` and the shuffle/negative stream from
    an independent child of the same seed, so ensemble members differ only in
    their seed.
    """
    table = TransitionTable(data)
    if len(table) < 2:
        raise ValueError("need at least 2 transitions")
    model = WorldModel(model_cfg, seed=seed)
    model.train()
    params = ParamSet(model.world_parameters())
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed).spawn(5)[4]))
    result = TrainResult(model)
    if metrics_path is not None:
        Path(metrics_path).write_text("epoch,loss,pos_term,neg_term\n")
    total = loss_cfg.epochs * _batch_count(len(table), loss_cfg.batch_size)
    step = 0
    for epoch in range(1, loss_cfg.epochs + 1):
        sums, count = np.zeros(3), 0
        for bi, idx in enumerate(_batches(len(table), loss_cfg.batch_size, rng)):
            obs, act, nxt = table.batch(idx)
            perm = sample_negatives(len(idx), rng)
            params.zero_grad()
            loss, pos, neg = contrastive_objective(model, obs, nxt, act, perm, loss_cfg)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLossError(epoch, bi, value)
            loss.backward()
            adam_step(params, params.grads(), lr=loss_cfg.lr_at(step, total))
            step += 1
            sums += np.array([value, float(pos.data), float(neg.data)]) * len(idx)
            count += len(idx)
        m = EpochMetrics(epoch, *(sums / count))
        result.metrics.append(m)
        line = f"{m.epoch},{m.loss:.6f},{m.pos_term:.6f},{m.neg_term:.6f}"
        if metrics_path is not None:
            with open(metrics_path, "a") as f:
                f.write(line + "\n")
        if log is not None:
            log(line)
    model.eval()
    return result


def encode_states(model: WorldModel, data: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Latents, positions and in-hand flags of every stored state, flattened
    over (episode, t).  Returns (N, K, D), (N, K, 3), (N, K)."""
    model.eval()
    z = np.concatenate([model.encode_np(ep.obs) for ep in data])
    pos = np.concatenate([ep.positions for ep in data]).astype(np.float32)
    held = np.concatenate([ep.in_hand for ep in data]).astype(np.float32)
    return z, pos, held


def _fit_head(head, inputs: np.ndarray, loss_fn, epochs: int, batch: int, lr: float,
              seed: int) -> list[float]:
    params = ParamSet(head.named_parameters())
    rng = np.random.default_rng(seed)
    losses = []
    for _ in range(epochs):
        total = 0.0
        for idx in _batches(len(inputs), batch, rng):
            params.zero_grad()
            loss = loss_fn(head(Tensor(inputs[idx])), idx)
            loss.backward()
            adam_step(params, params.grads(), lr=lr)
            total += float(loss.data) * len(idx)
        losses.append(total / len(inputs))
    return losses


def train_probe(model: WorldModel, data: Dataset, epochs: int = 5, batch: int = 256,
                lr: float = 1e-3, seed: int = 0) -> list[float]:
    """Fit the position probe on frozen latents; returns per-epoch mean loss
    (mean squared error in workspace-normalised units)."""
    if any(ep.positions.size == 0 for ep in data):
        raise ValueError("dataset lacks position labels")
    z, pos, _ = encode_states(model, data)
    flat_z = z.reshape(-1, z.shape[-1])
    target = pos.reshape(-1, 3)
    model.probe.fit_input_stats(flat_z)
    scale = model.probe.scale

    def loss_fn(pred, idx):
        return ops.mse(pred * (1.0 / scale), target[idx] / scale)

    return _fit_head(model.probe, flat_z, loss_fn, epochs, batch, lr, seed)


def train_inhand(model: WorldModel, data: Dataset, epochs: int = 5, batch: int = 256,
                 lr: float = 1e-3, seed: int = 0) -> list[float]:
    """Fit the in-hand classifier on frozen latents with binary cross-entropy."""
    z, _, held = encode_states(model, data)
    flat_z = z.reshape(-1, z.shape[-1])
    labels = held.reshape(-1)
    model.inhand.fit_input_stats(flat_z)

    def loss_fn(logits, idx):
        return ops.binary_cross_entropy_with_logits(logits, labels[idx])

    return _fit_head(model.inhand, flat_z, loss_fn, epochs, batch, lr, seed)


def inhand_accuracy(model: WorldModel, data: Dataset) -> float:
    z, _, held = encode_states(model, data)
    with no_grad():
        pred = model.inhand_predict(z)
    return float((pred == held.astype(np.uint8)).mean())
