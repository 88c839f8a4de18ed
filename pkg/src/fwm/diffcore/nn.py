"""Layer containers on top of the op set."""
from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import Tensor


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Module:
    """Minimal parameter/buffer container with recursive naming."""

    training: bool = True

    def _children(self):
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def _own_params(self):
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield key, value

    def _own_buffers(self):
        for key, value in vars(self).items():
            if isinstance(value, np.ndarray):
                yield key, value

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._own_params()}
        for key, child in self._children():
            out.update(child.named_parameters(prefix + key + "."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self._own_buffers()}
        for key, child in self._children():
            out.update(child.named_buffers(prefix + key + "."))
        return out

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data for k, v in self.named_parameters().items()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        if missing:
            raise KeyError(f"missing tensors in state: {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float32)
        for k, b in buffers.items():
            b[...] = state[k]

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(data: np.ndarray, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, name: str = "linear"):
        self.name = name
        self.weight = _param(kaiming_uniform(rng, (fan_in, fan_out), fan_in), name + ".weight")
        self.bias = _param(np.zeros(fan_out, np.float32), name + ".bias")

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias, name=self.name)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, padding: int,
                 rng: np.random.Generator, name: str = "conv"):
        self.name = name
        self.stride, self.padding = stride, padding
        fan_in = in_ch * kernel * kernel
        self.weight = _param(kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in),
                             name + ".weight")
        self.bias = _param(np.zeros(out_ch, np.float32), name + ".bias")

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, name=self.name)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, name: str = "bn"):
        self.name = name
        self.momentum, self.eps = momentum, eps
        self.gamma = _param(np.ones(channels, np.float32), name + ".gamma")
        self.beta = _param(np.zeros(channels, np.float32), name + ".beta")
        self.running_mean = np.zeros(channels, np.float32)
        self.running_var = np.ones(channels, np.float32)

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps, name=self.name)


class LayerNorm(Module):
    def __init__(self, features: int, eps: float = 1e-5, name: str = "ln"):
        self.name = name
        self.eps = eps
        self.gamma = _param(np.ones(features, np.float32), name + ".gamma")
        self.beta = _param(np.zeros(features, np.float32), name + ".beta")

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps, name=self.name)


class MLP(Module):
    """Stack of Linear layers; every non-output layer is followed by
    (optional LayerNorm) + ReLU."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, layer_norm: bool = False,
                 name: str = "mlp"):
        self.layers = [Linear(a, b, rng, name=f"{name}.{i}") for i, (a, b) in
                       enumerate(zip(sizes[:-1], sizes[1:]))]
        self.norms = ([LayerNorm(b, name=f"{name}.ln{i}") for i, b in enumerate(sizes[1:-1])]
                      if layer_norm else [])

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                if self.norms:
                    x = self.norms[i](x)
                x = ops.relu(x)
        return x
