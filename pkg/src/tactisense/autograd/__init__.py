"""Minimal reverse-mode autodiff engine with the layers the estimators need."""

from .tensor import Tensor, GraphError, ShapeError, NumericFault, no_grad
from .layers import (LayerSpec, Layer, Sequential, build_layer, forward, backward, LAYER_KINDS)
from .optim import AdamState, adam_step, mse_l1_loss
from . import checkpoint

__all__ = [
    "Tensor", "GraphError", "ShapeError", "NumericFault", "no_grad",
    "LayerSpec", "Layer", "Sequential", "build_layer", "forward", "backward", "LAYER_KINDS",
    "AdamState", "adam_step", "mse_l1_loss", "checkpoint",
]
