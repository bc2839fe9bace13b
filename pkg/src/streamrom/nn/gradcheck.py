from __future__ import annotations

import numpy as np

from .layers import mse_loss

__all__ = ["grad_check", "relative_error"]


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-wise relative discrepancy ``|a - b| / max(|a|, |b|)``."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def grad_check(network, x, target, loss=mse_loss, step: float = 1e-5,
               check_input: bool = True, max_entries: int | None = None, seed: int = 0) -> float:
    """Compare backprop gradients with central differences.

    ``network`` needs ``forward``, ``backward``, ``zero_grad`` and
    ``named_parameters``. Returns the largest norm-wise relative discrepancy
    over all parameter tensors (and the input, if ``check_input``).
    ``max_entries`` limits the number of probed entries per tensor.
    """
    x = np.array(x, dtype=np.float64)
    rng = np.random.default_rng(seed)

    network.zero_grad()
    value, dy = loss(network.forward(x), target)
    dx = network.backward(dy)

    def objective():
        return loss(network.forward(x), target)[0]

    tensors = [(p, g.copy()) for _, p, g in network.named_parameters()]
    if check_input:
        tensors.append((x, np.asarray(dx)))

    worst = 0.0
    for p, analytic in tensors:
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        numeric = np.empty(idx.size)
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = objective()
            flat[i] = orig - step
            down = objective()
            flat[i] = orig
            numeric[n] = (up - down) / (2.0 * step)
        worst = max(worst, relative_error(analytic.reshape(-1)[idx], numeric))
    return worst
