"""Activation functions and their derivatives."""
from __future__ import annotations

import numpy as np

LEAKY_SLOPE = 0.01
ELU_ALPHA = 1.0

NAMES = ("linear", "sigmoid", "tanh", "relu", "leaky_relu", "elu", "swish", "softmax")

_ALIASES = {
    "identity": "linear",
    "none": "linear",
    "leaky relu": "leaky_relu",
    "leakyrelu": "leaky_relu",
    "silu": "swish",
}


def canonical(name: str) -> str:
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in NAMES:
        raise ValueError(f"unknown activation {name!r}; choose from {NAMES}")
    return key


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    return _sigmoid(np.asarray(x, dtype=np.float64))


def softmax(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def activation(name: str, x) -> np.ndarray:
    """Apply an activation elementwise (softmax: along the last axis)."""
    name = canonical(name)
    x = np.asarray(x, dtype=np.float64)
    if name == "linear":
        return x.copy()
    if name == "sigmoid":
        return _sigmoid(x)
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "leaky_relu":
        return np.where(x > 0, x, LEAKY_SLOPE * x)
    if name == "elu":
        return np.where(x > 0, x, ELU_ALPHA * np.expm1(np.minimum(x, 0.0)))
    if name == "swish":
        return x * _sigmoid(x)
    return softmax(x)


def derivative(name: str, x) -> np.ndarray:
    """dy/dx. Elementwise for all but softmax, which returns the per-row Jacobian ``(..., k, k)``."""
    name = canonical(name)
    x = np.asarray(x, dtype=np.float64)
    if name == "linear":
        return np.ones_like(x)
    if name == "sigmoid":
        s = _sigmoid(x)
        return s * (1.0 - s)
    if name == "tanh":
        return 1.0 - np.tanh(x) ** 2
    if name == "relu":
        return (x > 0).astype(np.float64)
    if name == "leaky_relu":
        return np.where(x > 0, 1.0, LEAKY_SLOPE)
    if name == "elu":
        return np.where(x > 0, 1.0, ELU_ALPHA * np.exp(np.minimum(x, 0.0)))
    if name == "swish":
        s = _sigmoid(x)
        return s + x * s * (1.0 - s)
    y = softmax(x)
    return y[..., :, None] * (np.eye(y.shape[-1]) - y[..., None, :])


def backward(name: str, x, y, grad_out) -> np.ndarray:
    """Vector-Jacobian product for the activation evaluated at pre-activation ``x`` (output ``y``)."""
    name = canonical(name)
    if name == "linear":
        return grad_out
    if name == "softmax":
        return y * (grad_out - np.sum(grad_out * y, axis=-1, keepdims=True))
    if name == "tanh":
        return grad_out * (1.0 - y * y)
    if name == "sigmoid":
        return grad_out * y * (1.0 - y)
    return grad_out * derivative(name, x)
