"""Latent transition models: a residual stack of action-conditioned GNN layers
and the non-factorized MLP ablation."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..diffcore import MLP, LayerNorm, Linear, Module, Tensor
from ..diffcore import ops
from ..diffcore.nn import _param, kaiming_uniform
from .config import ModelConfig


@lru_cache(maxsize=None)
def edge_index(k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sources, targets and the (K, E) target incidence of all ordered pairs
    ``j -> i`` with ``i != j``, in row-major (i, j) order."""
    pairs = [(j, i) for i in range(k) for j in range(k) if i != j]
    src = np.array([p[0] for p in pairs], dtype=np.int64)
    dst = np.array([p[1] for p in pairs], dtype=np.int64)
    inc = np.zeros((k, len(pairs)), np.float32)
    inc[dst, np.arange(len(pairs))] = 1.0
    for arr in (src, dst, inc):
        arr.flags.writeable = False
    return src, dst, inc


class SplitLinear(Module):
    """A Linear layer over a concatenated input, stored as one weight block per
    input part so parts can be projected separately and then summed."""

    def __init__(self, parts: dict[str, int], fan_out: int, rng: np.random.Generator, name: str):
        self.name = name
        self.parts = list(parts)
        fan_in = sum(parts.values())
        full = kaiming_uniform(rng, (fan_in, fan_out), fan_in)
        offsets = np.cumsum([0] + list(parts.values()))
        self.weights = {p: _param(full[lo:hi], f"{name}.weight_{p}")
                        for p, lo, hi in zip(self.parts, offsets[:-1], offsets[1:])}
        self.bias = _param(np.zeros(fan_out, np.float32), name + ".bias")

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {f"{prefix}weight_{p}": self.weights[p] for p in self.parts}
        out[prefix + "bias"] = self.bias
        return out

    def project(self, part: str, x: Tensor) -> Tensor:
        return ops.linear(x, self.weights[part], None, name=f"{self.name}[{part}]")


class GNNLayer(Module):
    """One round of message passing.

    Edge network on (z_j, z_i, a) for every ordered pair j -> i, then a node
    network on (z_i, a, sum of incoming edges).  Both are one-hidden-layer MLPs
    with LayerNorm + ReLU after the hidden layer.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, name: str = "gnn"):
        self.edge_actions = cfg.edge_actions
        d, h, e = cfg.d_z, cfg.hidden, cfg.edge_dim
        edge_parts = {"src": d, "dst": d}
        if cfg.edge_actions:
            edge_parts["action"] = cfg.d_a
        self.edge_in = SplitLinear(edge_parts, h, rng, name=f"{name}.edge.0")
        self.edge_ln = LayerNorm(h, name=f"{name}.edge.ln0")
        self.edge_out = Linear(h, e, rng, name=f"{name}.edge.1")
        self.node_in = SplitLinear({"node": d, "action": cfg.d_a, "agg": e}, h, rng,
                                   name=f"{name}.node.0")
        self.node_ln = LayerNorm(h, name=f"{name}.node.ln0")
        self.node_out = Linear(h, d, rng, name=f"{name}.node.1")

    def forward(self, z: Tensor, a: Tensor) -> Tensor:
        """z: (B, K, d_z), a: (B, d_a) -> (B, K, d_z)."""
        b, k, _ = z.shape
        src, dst, inc = edge_index(k)
        a3 = a.reshape(b, 1, a.shape[-1])
        if len(src):
            pre = (ops.gather(self.edge_in.project("src", z), src, axis=1)
                   + ops.gather(self.edge_in.project("dst", z), dst, axis=1)
                   + self.edge_in.bias)
            if self.edge_actions:
                pre = pre + self.edge_in.project("action", a3)
            edges = self.edge_out(ops.relu(self.edge_ln(pre)))
            agg = ops.segment_sum(edges, inc, axis=1)
            agg_term = self.node_in.project("agg", agg)
        else:
            agg_term = None  # no pairs: the edge sum is the zero vector
        pre = self.node_in.project("node", z) + self.node_in.project("action", a3) + self.node_in.bias
        if agg_term is not None:
            pre = pre + agg_term
        return self.node_out(ops.relu(self.node_ln(pre)))


class ResidualGNN(Module):
    """``y_0 = z``, ``y_l = y_{l-1} + GNN_l(y_{l-1}, a)``; the prediction is
    ``y_L``, so the stack is the identity when every layer outputs zero."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.layers = [GNNLayer(cfg, rng, name=f"transition.{i}") for i in range(cfg.num_layers)]

    def forward(self, z: Tensor, a: Tensor) -> Tensor:
        y = z
        for layer in self.layers:
            y = y + layer(y, a)
        return y


class MonolithicTransition(Module):
    """Non-factorized ablation: one MLP over the concatenation of a fixed
    number of slots (zero padded or truncated) and the action, predicting a
    residual for every slot."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.k, self.d = cfg.max_objects, cfg.d_z
        size = self.k * self.d
        self.mlp = MLP([size + cfg.d_a, cfg.hidden, cfg.hidden, size], rng, layer_norm=True,
                       name="transition.mlp")

    def forward(self, z: Tensor, a: Tensor) -> Tensor:
        b, k, d = z.shape
        kept = min(k, self.k)
        flat = z[:, :kept].reshape(b, kept * d)
        if kept < self.k:
            flat = ops.concat([flat, Tensor(np.zeros((b, (self.k - kept) * d), z.dtype))], axis=1)
        delta = self.mlp(ops.concat([flat, a], axis=1))[:, :kept * d].reshape(b, kept, d)
        if kept < k:
            # slots beyond the fixed width are passed through unchanged
            delta = ops.concat([delta, Tensor(np.zeros((b, k - kept, d), z.dtype))], axis=1)
        return z + delta


def make_transition(cfg: ModelConfig, rng: np.random.Generator) -> Module:
    return ResidualGNN(cfg, rng) if cfg.factorized else MonolithicTransition(cfg, rng)

