"""Forward/backward wrapper around a graph-building function, plus a
finite-difference gradient checker."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .nn import Module
from .tensor import Tensor


@dataclass
class Gradients:
    params: dict[str, np.ndarray]
    inputs: dict[str, np.ndarray]


class ComputationSpec:
    """A differentiable computation over named inputs and a fixed parameter dict.

    ``fn`` receives a dict of input Tensors and returns one output Tensor.
    ``modules`` (optional) are put in the requested train/eval mode and have
    their buffers snapshotted by :func:`grad_check`.
    """

    def __init__(self, fn: Callable[[dict[str, Tensor]], Tensor], params: Mapping[str, Tensor],
                 modules: tuple[Module, ...] = ()):
        self.fn = fn
        self.params = dict(params)
        self.modules = modules
        self._inputs: dict[str, Tensor] | None = None
        self._output: Tensor | None = None

    def forward(self, inputs: Mapping[str, np.ndarray], dtype=np.float32) -> np.ndarray:
        self._inputs = {k: Tensor(np.asarray(v, dtype=dtype), requires_grad=True, name=k)
                        for k, v in inputs.items()}
        for p in self.params.values():
            p.grad = None
        self._output = self.fn(self._inputs)
        return self._output.data

    def backward(self, upstream: np.ndarray | float | None = None) -> Gradients:
        if self._output is None or self._inputs is None:
            raise RuntimeError("backward() called before forward()")
        out = self._output
        if not out.requires_grad:
            zero = {k: np.zeros_like(p.data) for k, p in self.params.items()}
            return Gradients(zero, {k: np.zeros_like(t.data) for k, t in self._inputs.items()})
        out.backward(upstream)
        params = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                  for k, p in self.params.items()}
        inputs = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                  for k, t in self._inputs.items()}
        self._output = None
        return Gradients(params, inputs)


def grad_check(graph: ComputationSpec, inputs: Mapping[str, np.ndarray], h: float = 1e-3,
               n_samples: int = 64, seed: int = 0, check_inputs: bool = False,
               abs_floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in float64 on a stratified random subsample of parameter entries
    (and optionally input entries).  Relative error is
    ``|a - n| / max(|a|, |n|, abs_floor)``.  Parameters and module buffers are
    restored afterwards.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    rng = np.random.default_rng(seed)
    saved = {k: p.data for k, p in graph.params.items()}
    buffers = [m.named_buffers() for m in graph.modules]
    saved_buffers = [{k: b.copy() for k, b in bufs.items()} for bufs in buffers]

    def restore_buffers():
        for bufs, snap in zip(buffers, saved_buffers):
            for k, b in bufs.items():
                b[...] = snap[k]

    x64 = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}
    try:
        for k, p in graph.params.items():
            p.data = saved[k].astype(np.float64)
        out = graph.forward(x64, dtype=np.float64)
        proj = np.ones_like(out) if out.size == 1 else rng.standard_normal(out.shape)
        grads = graph.backward(proj)
        restore_buffers()

        def objective() -> float:
            val = float(np.sum(graph.forward(x64, dtype=np.float64) * proj))
            restore_buffers()
            return val

        targets: list[tuple[np.ndarray, np.ndarray, int]] = []
        per = max(1, n_samples // max(1, len(graph.params)))
        for k, p in graph.params.items():
            for idx in rng.choice(p.data.size, size=min(per, p.data.size), replace=False):
                targets.append((p.data.reshape(-1), grads.params[k].reshape(-1), int(idx)))
        if check_inputs:
            for k, arr in x64.items():
                for idx in rng.choice(arr.size, size=min(per, arr.size), replace=False):
                    targets.append((arr.reshape(-1), grads.inputs[k].reshape(-1), int(idx)))

        worst = 0.0
        for flat, analytic, idx in targets:
            orig = flat[idx]
            flat[idx] = orig + h
            plus = objective()
            flat[idx] = orig - h
            minus = objective()
            flat[idx] = orig
            numeric = (plus - minus) / (2.0 * h)
            a = float(analytic[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), abs_floor)
            worst = max(worst, err)
        return worst
    finally:
        for k, p in graph.params.items():
            p.data = saved[k]
            p.grad = None
        restore_buffers()
