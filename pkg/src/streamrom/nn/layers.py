"""Layers with explicit forward/backward passes (NHWC tensors, float64)."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import activations as act

__all__ = [
    "LayerSpec",
    "Layer",
    "Dense",
    "Conv2D",
    "MaxPool2D",
    "UpSample2D",
    "Flatten",
    "Reshape",
    "Sequential",
    "build_sequential",
    "mse_loss",
    "conv2d_forward",
    "maxpool2d",
    "upsample2d",
]

KERNEL = 3
POOL = 2


@dataclass(frozen=True)
class LayerSpec:
    """Declarative layer description; ``size`` is units (dense) or filters (conv)."""

    kind: str
    size: int | None = None
    activation: str = "linear"
    shape: tuple[int, ...] | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["shape"] is not None:
            d["shape"] = list(d["shape"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        shape = d.get("shape")
        return cls(
            kind=d["kind"],
            size=d.get("size"),
            activation=d.get("activation", "linear"),
            shape=tuple(shape) if shape is not None else None,
        )


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class Dense(Layer):
    def __init__(self, in_features: int, units: int, activation: str = "linear", rng=None):
        super().__init__()
        self.activation = act.canonical(activation)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = _glorot(rng, (in_features, units), in_features, units)
        self.params["b"] = np.zeros(units)
        self.zero_grad()

    def output_shape(self, input_shape):
        if len(input_shape) != 1 or input_shape[0] != self.params["W"].shape[0]:
            raise ValueError(f"dense layer expects ({self.params['W'].shape[0]},), got {input_shape}")
        return (self.params["W"].shape[1],)

    def forward(self, x):
        self._x = x
        self._z = x @ self.params["W"] + self.params["b"]
        self._y = act.activation(self.activation, self._z)
        return self._y

    def backward(self, dy):
        dz = act.backward(self.activation, self._z, self._y, dy)
        self.grads["W"] += self._x.T @ dz
        self.grads["b"] += dz.sum(axis=0)
        return dz @ self.params["W"].T


def _im2col(x: np.ndarray) -> np.ndarray:
    B, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(1, 2))  # B,H,W,C,k,k
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(B * H * W, KERNEL * KERNEL * C)


def conv2d_forward(x, kernels, bias) -> np.ndarray:
    """Same-padded, stride-1 3x3 cross-correlation. ``kernels`` is ``(3, 3, C_in, C_out)``."""
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    if x.ndim != 4 or kernels.shape[:3] != (KERNEL, KERNEL, x.shape[3]):
        raise ValueError(f"shape mismatch: input {x.shape}, kernels {kernels.shape}")
    B, H, W, _ = x.shape
    out = _im2col(x) @ kernels.reshape(-1, kernels.shape[3]) + bias
    return out.reshape(B, H, W, kernels.shape[3])


class Conv2D(Layer):
    def __init__(self, in_channels: int, filters: int, activation: str = "linear", rng=None):
        super().__init__()
        self.activation = act.canonical(activation)
        rng = rng if rng is not None else np.random.default_rng(0)
        k2 = KERNEL * KERNEL
        self.params["W"] = _glorot(rng, (KERNEL, KERNEL, in_channels, filters), k2 * in_channels, k2 * filters)
        self.params["b"] = np.zeros(filters)
        self.zero_grad()

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[2] != self.params["W"].shape[2]:
            raise ValueError(f"conv layer expects (H, W, {self.params['W'].shape[2]}), got {input_shape}")
        return (input_shape[0], input_shape[1], self.params["W"].shape[3])

    def forward(self, x):
        if x.ndim != 4 or x.shape[3] != self.params["W"].shape[2]:
            raise ValueError(f"conv layer got input of shape {x.shape}")
        B, H, W, _ = x.shape
        F = self.params["W"].shape[3]
        self._xshape = x.shape
        self._cols = _im2col(x)
        z = self._cols @ self.params["W"].reshape(-1, F) + self.params["b"]
        self._z = z.reshape(B, H, W, F)
        self._y = act.activation(self.activation, self._z)
        return self._y

    def backward(self, dy):
        B, H, W, C = self._xshape
        F = self.params["W"].shape[3]
        dz = act.backward(self.activation, self._z, self._y, dy).reshape(-1, F)
        self.grads["W"] += (self._cols.T @ dz).reshape(self.params["W"].shape)
        self.grads["b"] += dz.sum(axis=0)
        # input gradient is a same-padded convolution of dz with the flipped, transposed kernel
        flipped = self.params["W"][::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, C)
        return (_im2col(dz.reshape(B, H, W, F)) @ flipped).reshape(B, H, W, C)


def _pool_windows(x):
    B, H, W, C = x.shape
    if H % POOL or W % POOL:
        raise ValueError(f"max pooling needs even spatial dims, got {H}x{W}")
    return (
        x.reshape(B, H // POOL, POOL, W // POOL, POOL, C)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(B, H // POOL, W // POOL, C, POOL * POOL)
    )


def maxpool2d(x) -> np.ndarray:
    """2x2 max pooling on NHWC input."""
    return _pool_windows(np.asarray(x, dtype=np.float64)).max(axis=-1)


def upsample2d(x) -> np.ndarray:
    """Nearest-neighbour x2 upsampling on NHWC input."""
    x = np.asarray(x, dtype=np.float64)
    return np.repeat(np.repeat(x, POOL, axis=1), POOL, axis=2)


class MaxPool2D(Layer):
    def output_shape(self, input_shape):
        H, W, C = input_shape
        if H % POOL or W % POOL:
            raise ValueError(f"max pooling needs even spatial dims, got {H}x{W}")
        return (H // POOL, W // POOL, C)

    def forward(self, x):
        win = _pool_windows(x)
        self._xshape = x.shape
        self._arg = win.argmax(axis=-1)
        return np.take_along_axis(win, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        B, H, W, C = self._xshape
        dwin = np.zeros(dy.shape + (POOL * POOL,))
        np.put_along_axis(dwin, self._arg[..., None], dy[..., None], axis=-1)
        return (
            dwin.reshape(B, H // POOL, W // POOL, C, POOL, POOL)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(B, H, W, C)
        )


class UpSample2D(Layer):
    def output_shape(self, input_shape):
        H, W, C = input_shape
        return (H * POOL, W * POOL, C)

    def forward(self, x):
        return upsample2d(x)

    def backward(self, dy):
        B, H, W, C = dy.shape
        return dy.reshape(B, H // POOL, POOL, W // POOL, POOL, C).sum(axis=(2, 4))


class Flatten(Layer):
    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x):
        self._xshape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._xshape)


class Reshape(Layer):
    def __init__(self, shape: Sequence[int]):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def output_shape(self, input_shape):
        if int(np.prod(input_shape)) != int(np.prod(self.shape)):
            raise ValueError(f"cannot reshape {input_shape} to {self.shape}")
        return self.shape

    def forward(self, x):
        self._xshape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dy):
        return dy.reshape(self._xshape)


class Sequential:
    """A stack of layers with a fixed input shape (batch axis excluded)."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...], specs: list[LayerSpec] | None = None):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.specs = specs
        shape = self.input_shape
        for layer in layers:
            shape = layer.output_shape(shape)
        self.output_shape = shape

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"expected input of shape (B, {self.input_shape}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                yield f"{i}.{name}", layer.params[name], layer.grads[name]

    def parameters(self) -> list[np.ndarray]:
        return [p for _, p, _ in self.named_parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [g for _, _, g in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.copy() for name, p, _ in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for name, p, _ in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing tensor {name}")
            if state[name].shape != p.shape:
                raise ValueError(f"tensor {name}: shape {state[name].shape} != {p.shape}")
            p[...] = state[name]


def build_sequential(specs: Sequence[LayerSpec], input_shape: Sequence[int], rng=None) -> Sequential:
    """Instantiate layers from specs, inferring fan-in from the running shape."""
    rng = rng if rng is not None else np.random.default_rng(0)
    shape = tuple(input_shape)
    layers: list[Layer] = []
    for spec in specs:
        kind = spec.kind.lower()
        if kind == "dense":
            if len(shape) != 1:
                raise ValueError(f"dense layer after non-flat shape {shape}; add a flatten layer")
            layer = Dense(shape[0], spec.size, spec.activation, rng)
        elif kind == "conv2d":
            layer = Conv2D(shape[-1], spec.size, spec.activation, rng)
        elif kind == "maxpool2d":
            layer = MaxPool2D()
        elif kind == "upsample2d":
            layer = UpSample2D()
        elif kind == "flatten":
            layer = Flatten()
        elif kind == "reshape":
            layer = Reshape(spec.shape)
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r}")
        shape = layer.output_shape(shape)
        layers.append(layer)
    return Sequential(layers, tuple(input_shape), list(specs))


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean over samples of the squared error norm, and its gradient w.r.t. ``pred``."""
    diff = pred - target
    n = diff.shape[0]
    return float(np.sum(diff * diff) / n), 2.0 * diff / n
