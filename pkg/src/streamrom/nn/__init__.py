"""Minimal float64 neural-network substrate: layers, activations, Adam, gradient checking."""
from .activations import activation, derivative, sigmoid, softmax
from .gradcheck import grad_check, relative_error
from .layers import (
    Conv2D,
    Dense,
    Flatten,
    Layer,
    LayerSpec,
    MaxPool2D,
    Reshape,
    Sequential,
    UpSample2D,
    build_sequential,
    conv2d_forward,
    maxpool2d,
    mse_loss,
    upsample2d,
)
from .optim import AdamState, adam_step

__all__ = [
    "activation", "derivative", "sigmoid", "softmax",
    "grad_check", "relative_error",
    "Conv2D", "Dense", "Flatten", "Layer", "LayerSpec", "MaxPool2D", "Reshape",
    "Sequential", "UpSample2D", "build_sequential", "conv2d_forward", "maxpool2d",
    "mse_loss", "upsample2d",
    "AdamState", "adam_step",
]
