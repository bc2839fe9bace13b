from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import mse_loss
from .optim import AdamState, adam_step

__all__ = ["TrainingDiverged", "History", "split_indices", "train_model", "evaluate_loss"]


class TrainingDiverged(RuntimeError):
    """Loss became NaN or infinite during training."""


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    @property
    def best_val(self) -> float:
        vals = self.val_loss if self.val_loss else self.train_loss
        return float(np.min(vals)) if vals else float("nan")

    @property
    def best_train(self) -> float:
        return float(np.min(self.train_loss)) if self.train_loss else float("nan")


def split_indices(n: int, val_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle split; the validation share is empty when ``n < 2``."""
    order = rng.permutation(n)
    n_val = int(round(val_fraction * n)) if n >= 2 else 0
    n_val = min(n_val, n - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def evaluate_loss(model, x, y, batch_size: int = 256, loss=mse_loss) -> float:
    total = 0.0
    for start in range(0, x.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        value, _ = loss(model.forward(x[sl]), y[sl])
        total += value * x[sl].shape[0]
    return total / x.shape[0]


def train_model(model, x, y, *, epochs: int, batch_size: int, lr: float, seed: int = 0,
                val_fraction: float = 0.1, loss=mse_loss) -> History:
    """Mini-batch Adam on ``loss``; deterministic for a fixed seed.

    The reported epoch training loss is the sample-weighted mean of the batch
    losses seen during that epoch.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty training set")
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and targets differ in sample count")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = split_indices(x.shape[0], val_fraction, rng)
    state = AdamState(lr=lr)
    params = model.parameters()
    history = History()
    for epoch in range(epochs):
        order = train_idx[rng.permutation(train_idx.size)]
        total = 0.0
        for start in range(0, order.size, batch_size):
            batch = order[start:start + batch_size]
            model.zero_grad()
            value, dy = loss(model.forward(x[batch]), y[batch])
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            model.backward(dy)
            adam_step(params, model.gradients(), state)
            total += value * batch.size
        history.train_loss.append(total / order.size)
        if val_idx.size:
            history.val_loss.append(evaluate_loss(model, x[val_idx], y[val_idx], loss=loss))
    return history
