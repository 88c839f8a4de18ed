"""Minimal reverse-mode autodiff core: tensors, layers, Adam, gradient checking."""
from .graph import ComputationSpec, Gradients, grad_check
from .nn import MLP, BatchNorm, Conv2d, LayerNorm, Linear, Module
from .optim import NonFiniteGradientError, ParamSet, adam_step
from .tensor import ShapeError, Tensor, no_grad

__all__ = [
    "BatchNorm",
    "ComputationSpec",
    "Conv2d",
    "Gradients",
    "LayerNorm",
    "Linear",
    "MLP",
    "Module",
    "NonFiniteGradientError",
    "ParamSet",
    "ShapeError",
    "Tensor",
    "adam_step",
    "grad_check",
    "no_grad",
]
