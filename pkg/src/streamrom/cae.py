"""Convolutional autoencoder over reduced (basis-projected) snapshot vectors.

A length-``n`` vector is zero-padded and laid out row-major on a
``side x side`` image (one channel per field component), encoded to ``q``
latent variables and decoded back; the padding is cropped off again, so the
reconstruction loss only sees the ``n`` real coefficients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn.layers import LayerSpec, Sequential, build_sequential, mse_loss
from .nn.training import History, evaluate_loss, train_model

__all__ = [
    "CaeModel",
    "CAE_PRESETS",
    "build_cae",
    "reshape_to_image",
    "flatten_image",
    "encode",
    "decode",
    "train_cae",
    "cae_loss",
]


def _enc(convs, denses, q):
    specs = []
    for f in convs:
        specs += [LayerSpec("conv2d", f, "elu"), LayerSpec("maxpool2d")]
    specs.append(LayerSpec("flatten"))
    specs += [LayerSpec("dense", u, "elu") for u in denses]
    specs.append(LayerSpec("dense", q, "linear"))
    return specs


def _dec(denses, seed_shape, convs, channels):
    specs = [LayerSpec("dense", u, "elu") for u in denses]
    specs.append(LayerSpec("dense", int(np.prod(seed_shape)), "elu"))
    specs.append(LayerSpec("reshape", shape=tuple(seed_shape)))
    for f in convs:
        specs += [LayerSpec("conv2d", f, "elu"), LayerSpec("upsample2d")]
    specs.append(LayerSpec("conv2d", channels, "linear"))
    return specs


# encoder conv filters / encoder dense widths / decoder dense widths / decoder conv filters
CAE_PRESETS = {
    "cd": dict(side=16, enc_convs=(25, 10), enc_dense=(20, 10), dec_dense=(10, 20), dec_convs=(10, 25, 30)),
    "cylinder": dict(side=32, enc_convs=(30, 20, 15, 10), enc_dense=(40, 50, 25, 10), dec_dense=(10, 25, 50),
                     dec_convs=(10, 15, 20, 30)),
    "artery": dict(side=16, enc_convs=(30, 20, 10), enc_dense=(40, 10), dec_dense=(10, 40), dec_convs=(10, 20, 30)),
}


def reshape_to_image(u_n, side: int) -> np.ndarray:
    """Row-major fill of a ``(n,)`` or ``(channels, n)`` vector into ``(side, side, channels)``."""
    u = np.asarray(u_n, dtype=np.float64)
    if u.ndim == 1:
        u = u[None]
    return _to_images(u[None], side)[0]


def flatten_image(image, n: int) -> np.ndarray:
    """Inverse of :func:`reshape_to_image`: ``(side, side, C)`` to ``(n,)`` or ``(C, n)``."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    out = _from_images(img[None], n)[0]
    return out[0] if out.shape[0] == 1 else out


def _to_images(u: np.ndarray, side: int) -> np.ndarray:
    """``(B, C, n)`` to ``(B, side, side, C)``."""
    B, C, n = u.shape
    if side * side < n:
        raise ValueError(f"side {side} too small for {n} coefficients")
    padded = np.zeros((B, C, side * side))
    padded[:, :, :n] = u
    return padded.reshape(B, C, side, side).transpose(0, 2, 3, 1)


def _from_images(img: np.ndarray, n: int) -> np.ndarray:
    """``(B, side, side, C)`` to ``(B, C, n)``."""
    B, side, _, C = img.shape
    return img.transpose(0, 3, 1, 2).reshape(B, C, side * side)[:, :, :n]


@dataclass
class CaeModel:
    encoder: Sequential
    decoder: Sequential
    n: int
    q: int
    side: int
    channels: int = 1

    def __post_init__(self):
        if self.encoder.output_shape != (self.q,):
            raise ValueError(f"encoder outputs {self.encoder.output_shape}, expected ({self.q},)")
        if self.decoder.input_shape != (self.q,):
            raise ValueError("decoder input must match the latent size")
        if self.decoder.output_shape != (self.side, self.side, self.channels):
            raise ValueError(f"decoder outputs {self.decoder.output_shape}, expected image "
                             f"({self.side}, {self.side}, {self.channels})")
        if self.side * self.side < self.n:
            raise ValueError("image too small for the reduced vector")
        if self.q > self.n:
            raise ValueError(f"latent size q={self.q} exceeds input size n={self.n}")

    # vectors are (B, n) for one channel, (B, C, n) otherwise
    def _as_batch(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.channels == 1 and u.ndim == 2:
            u = u[:, None, :]
        if u.ndim != 3 or u.shape[1:] != (self.channels, self.n):
            raise ValueError(f"expected reduced vectors of length {self.n} "
                             f"with {self.channels} channel(s), got shape {u.shape}")
        return u

    def _out(self, v):
        return v[:, 0, :] if self.channels == 1 else v

    def encode_batch(self, u):
        return self.encoder.forward(_to_images(self._as_batch(u), self.side))

    def decode_batch(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.q:
            raise ValueError(f"expected latent vectors of length {self.q}, got shape {z.shape}")
        return self._out(_from_images(self.decoder.forward(z), self.n))

    # autoencoder as a trainable model: input u_n, output reconstructed u_n
    def forward(self, u):
        return self.decode_batch(self.encode_batch(u))

    def backward(self, dy):
        dy = np.asarray(dy)
        if self.channels == 1:
            dy = dy[:, None, :]
        dz = self.decoder.backward(_to_images(dy, self.side))
        dimg = self.encoder.backward(dz)
        return self._out(_from_images(dimg, self.n))

    def zero_grad(self):
        self.encoder.zero_grad()
        self.decoder.zero_grad()

    def named_parameters(self):
        for name, p, g in self.encoder.named_parameters():
            yield "encoder." + name, p, g
        for name, p, g in self.decoder.named_parameters():
            yield "decoder." + name, p, g

    def parameters(self):
        return [p for _, p, _ in self.named_parameters()]

    def gradients(self):
        return [g for _, _, g in self.named_parameters()]

    def state_dict(self):
        return {name: p.copy() for name, p, _ in self.named_parameters()}

    def load_state_dict(self, state):
        for name, p, _ in self.named_parameters():
            p[...] = state[name]

    def config(self) -> dict:
        return {
            "n": self.n, "q": self.q, "side": self.side, "channels": self.channels,
            "encoder": [s.to_dict() for s in self.encoder.specs],
            "decoder": [s.to_dict() for s in self.decoder.specs],
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "CaeModel":
        return build_cae(
            cfg["n"], cfg["q"], side=cfg["side"], channels=cfg["channels"],
            encoder_specs=[LayerSpec.from_dict(d) for d in cfg["encoder"]],
            decoder_specs=[LayerSpec.from_dict(d) for d in cfg["decoder"]],
        )


def build_cae(n: int, q: int, preset: str = "cd", *, side: int | None = None, channels: int = 1,
              encoder_specs=None, decoder_specs=None, seed: int = 0) -> CaeModel:
    """Build an autoencoder from a named preset or explicit layer specs.

    With a preset, ``side`` defaults to the preset's image size (enlarged to the
    next multiple of the pooling/upsampling factor if ``n`` does not fit).
    """
    if encoder_specs is None or decoder_specs is None:
        p = CAE_PRESETS[preset]
        stride = 2 ** max(len(p["enc_convs"]), len(p["dec_convs"]))
        if side is None:
            side = p["side"]
            while side * side < n:
                side += stride
        seed_side = side // 2 ** len(p["dec_convs"])
        encoder_specs = encoder_specs or _enc(p["enc_convs"], p["enc_dense"], q)
        decoder_specs = decoder_specs or _dec(p["dec_dense"], (seed_side, seed_side, 3), p["dec_convs"], channels)
    if side is None:
        side = math.ceil(math.sqrt(n))
    rng = np.random.default_rng(seed)
    encoder = build_sequential(encoder_specs, (side, side, channels), rng)
    decoder = build_sequential(decoder_specs, (q,), rng)
    return CaeModel(encoder, decoder, n=n, q=q, side=side, channels=channels)


def encode(model: CaeModel, u_n) -> np.ndarray:
    """Latent vector(s) of standardized reduced input(s)."""
    u = np.asarray(u_n, dtype=np.float64)
    single = u.ndim == (1 if model.channels == 1 else 2)
    z = model.encode_batch(u[None] if single else u)
    return z[0] if single else z


def decode(model: CaeModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    out = model.decode_batch(z[None] if single else z)
    return out[0] if single else out


def cae_loss(model: CaeModel, data) -> float:
    """Mean over samples of the squared reconstruction error norm."""
    data = np.asarray(data, dtype=np.float64)
    return evaluate_loss(model, data, data)


def train_cae(model: CaeModel, data, *, epochs: int = 1500, batch_size: int = 8, lr: float = 1e-3,
              seed: int = 0, val_fraction: float = 0.1) -> History:
    """Train in place on standardized reduced vectors (rows are samples)."""
    data = np.asarray(data, dtype=np.float64)
    if data.shape[0] == 0:
        raise ValueError("empty CAE training set")
    return train_model(model, data, data, epochs=epochs, batch_size=batch_size, lr=lr,
                       seed=seed, val_fraction=val_fraction, loss=mse_loss)
