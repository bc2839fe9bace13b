"""Latent dynamics: sliding windows, stacked LSTM predictor, parameter-to-latent FFNN, activation search."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .nn import activations as act
from .nn.layers import Dense, LayerSpec, Sequential, build_sequential, mse_loss
from .nn.training import History, TrainingDiverged, train_model

__all__ = [
    "WindowedDataset",
    "build_windows",
    "series_from_windows",
    "lstm_cell_step",
    "split_gates",
    "LSTMLayer",
    "LstmModel",
    "build_lstm",
    "lstm_predict",
    "train_lstm",
    "FfnnModel",
    "build_ffnn",
    "ffnn_inputs",
    "train_ffnn",
    "NasTrial",
    "NasReport",
    "NasFailed",
    "nas_search",
    "NAS_CANDIDATES",
]

GATES = ("in", "fo", "ca", "out")
NAS_CANDIDATES = ("sigmoid", "leaky_relu", "relu", "elu", "swish")


# --------------------------------------------------------------------------- windows

@dataclass
class WindowedDataset:
    """``inputs[k]`` is a ``(w, q + xi)`` window; ``targets[k]`` the latent vector that follows it."""

    inputs: np.ndarray
    targets: np.ndarray
    param_index: np.ndarray
    start_index: np.ndarray
    window: int

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def window_count(self) -> int:
        """Windows per parameter (``N_t - w``)."""
        return int(np.count_nonzero(self.param_index == self.param_index[0]))


def build_windows(latents, mus, w: int) -> WindowedDataset:
    """Slide a length-``w`` window over each parameter's latent series.

    ``latents`` has shape ``(m, N_t, q)``, ``mus`` shape ``(m, xi)``. Each input
    row is ``[z(t_i), mu]``.
    """
    z = np.asarray(latents, dtype=np.float64)
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))
    if z.ndim == 2:
        z = z[None]
    m, nt, q = z.shape
    if mus.shape[0] != m:
        raise ValueError(f"{mus.shape[0]} parameter vectors for {m} latent series")
    if w < 1 or nt <= w:
        raise ValueError(f"need N_t > w, got N_t={nt}, w={w}")
    g = nt - w
    rows = np.concatenate([z, np.broadcast_to(mus[:, None, :], (m, nt, mus.shape[1]))], axis=2)
    idx = np.arange(g)[:, None] + np.arange(w)[None, :]
    inputs = rows[:, idx].reshape(m * g, w, q + mus.shape[1])
    targets = z[:, w:].reshape(m * g, q)
    return WindowedDataset(
        inputs=inputs,
        targets=targets,
        param_index=np.repeat(np.arange(m), g),
        start_index=np.tile(np.arange(g), m),
        window=w,
    )


def series_from_windows(ds: WindowedDataset, q: int) -> np.ndarray:
    """Recover the ``(m, N_t, q)`` latent series from windows and targets."""
    m = int(ds.param_index.max()) + 1
    g = ds.window_count
    out = np.empty((m, g + ds.window, q))
    for k in range(len(ds)):
        j, i = ds.param_index[k], ds.start_index[k]
        if i == 0:
            out[j, :ds.window] = ds.inputs[k, :, :q]
        out[j, i + ds.window] = ds.targets[k]
    return out


# --------------------------------------------------------------------------- LSTM

def split_gates(W: np.ndarray, b: np.ndarray) -> dict[str, np.ndarray]:
    """Stacked ``(4H, H + D)`` weights to named per-gate blocks in order in, fo, ca, out."""
    H = W.shape[0] // 4
    out = {}
    for k, name in enumerate(GATES):
        out[f"W_{name}"] = W[k * H:(k + 1) * H]
        out[f"b_{name}"] = b[k * H:(k + 1) * H]
    return out


def lstm_cell_step(x, h_prev, c_prev, weights: Mapping[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM step; gate weights act on the concatenation ``[h_prev, x]``."""
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    hx = np.concatenate([h_prev, x], axis=-1)
    H = h_prev.shape[-1]
    for name in GATES:
        Wg = weights[f"W_{name}"]
        if Wg.shape != (H, hx.shape[-1]) or weights[f"b_{name}"].shape != (H,):
            raise ValueError(f"gate {name}: weights {Wg.shape} do not fit hidden {H}, input {x.shape[-1]}")
    f = act.sigmoid(hx @ weights["W_fo"].T + weights["b_fo"])
    i = act.sigmoid(hx @ weights["W_in"].T + weights["b_in"])
    c_tilde = np.tanh(hx @ weights["W_ca"].T + weights["b_ca"])
    c = f * c_prev + i * c_tilde
    o = act.sigmoid(hx @ weights["W_out"].T + weights["b_out"])
    h = o * np.tanh(c)
    return h, c


class LSTMLayer:
    """Sequence-to-sequence LSTM layer with zero initial state and full BPTT."""

    def __init__(self, input_size: int, hidden: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        fan = input_size + hidden
        limit = np.sqrt(6.0 / (fan + 4 * hidden))
        self.hidden = hidden
        self.input_size = input_size
        self.params = {
            "W": rng.uniform(-limit, limit, size=(4 * hidden, fan)),
            "b": np.zeros(4 * hidden),
        }
        # forget-gate bias starts at one
        self.params["b"][hidden:2 * hidden] = 1.0
        self.zero_grad()

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x):
        B, T, D = x.shape
        if D != self.input_size:
            raise ValueError(f"LSTM layer expects input size {self.input_size}, got {D}")
        H = self.hidden
        W, b = self.params["W"], self.params["b"]
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        out = np.empty((B, T, H))
        self._cache = []
        for t in range(T):
            hx = np.concatenate([h, x[:, t]], axis=1)
            a = hx @ W.T + b
            i = act.sigmoid(a[:, :H])
            f = act.sigmoid(a[:, H:2 * H])
            g = np.tanh(a[:, 2 * H:3 * H])
            o = act.sigmoid(a[:, 3 * H:])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            out[:, t] = h
            self._cache.append((hx, i, f, g, o, c_prev, tc))
        return out

    def backward(self, dout):
        B, T, H = dout.shape
        W = self.params["W"]
        dx = np.empty((B, T, self.input_size))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        dW = self.grads["W"]
        db = self.grads["b"]
        for t in range(T - 1, -1, -1):
            hx, i, f, g, o, c_prev, tc = self._cache[t]
            dh = dout[:, t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            da = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ], axis=1)
            dc_next = dc * f
            dW += da.T @ hx
            db += da.sum(axis=0)
            dhx = da @ W
            dh_next = dhx[:, :H]
            dx[:, t] = dhx[:, H:]
        return dx

    def gate_weights(self) -> dict[str, np.ndarray]:
        return split_gates(self.params["W"], self.params["b"])


class LstmModel:
    """Stacked LSTM over a window followed by a dense head on the last hidden state."""

    def __init__(self, input_size: int, hidden: Sequence[int], output_size: int,
                 head_activation: str = "linear", seed: int = 0):
        rng = np.random.default_rng(seed)
        self.input_size = input_size
        self.hidden_sizes = tuple(int(h) for h in hidden)
        self.output_size = output_size
        self.head_activation = act.canonical(head_activation)
        self.layers = []
        size = input_size
        for h in self.hidden_sizes:
            self.layers.append(LSTMLayer(size, h, rng))
            size = h
        self.head = Dense(size, output_size, self.head_activation, rng)

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[2] != self.input_size:
            raise ValueError(f"expected windows (B, w, {self.input_size}), got {X.shape}")
        seq = X
        for layer in self.layers:
            seq = layer.forward(seq)
        self._seq_shape = seq.shape
        return self.head.forward(seq[:, -1])

    __call__ = forward

    def backward(self, dy):
        dlast = self.head.backward(dy)
        dseq = np.zeros(self._seq_shape)
        dseq[:, -1] = dlast
        for layer in reversed(self.layers):
            dseq = layer.backward(dseq)
        return dseq

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()
        self.head.zero_grad()

    def named_parameters(self):
        for k, layer in enumerate(self.layers):
            for name in ("W", "b"):
                yield f"lstm{k}.{name}", layer.params[name], layer.grads[name]
        for name in ("W", "b"):
            yield f"head.{name}", self.head.params[name], self.head.grads[name]

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
        return {"input_size": self.input_size, "hidden": list(self.hidden_sizes),
                "output_size": self.output_size, "head_activation": self.head_activation}

    @classmethod
    def from_config(cls, cfg: dict) -> "LstmModel":
        return cls(cfg["input_size"], cfg["hidden"], cfg["output_size"], cfg["head_activation"])


def build_lstm(q: int, xi: int, hidden: Sequence[int] = (50, 50, 50), head_activation: str = "linear",
               seed: int = 0) -> LstmModel:
    return LstmModel(q + xi, hidden, q, head_activation, seed)


def lstm_predict(model: LstmModel, window) -> np.ndarray:
    """Next latent vector for one ``(w, q + xi)`` window or a batch of them."""
    X = np.asarray(window, dtype=np.float64)
    single = X.ndim == 2
    y = model.forward(X[None] if single else X)
    return y[0] if single else y


def train_lstm(model: LstmModel, dataset: WindowedDataset, *, epochs: int = 1500, batch_size: int = 5,
               lr: float = 1e-3, seed: int = 0, val_fraction: float = 0.1) -> History:
    if len(dataset) == 0:
        raise ValueError("empty LSTM training set")
    return train_model(model, dataset.inputs, dataset.targets, epochs=epochs, batch_size=batch_size,
                       lr=lr, seed=seed, val_fraction=val_fraction, loss=mse_loss)


# --------------------------------------------------------------------------- FFNN

class FfnnModel(Sequential):
    """Dense regressor from ``[t, mu]`` to the latent vector."""

    def __init__(self, n_in: int, q: int, hidden: Sequence[int] = (50,), activation: str = "leaky_relu",
                 seed: int = 0):
        self.activation = act.canonical(activation)
        self.hidden_sizes = tuple(int(h) for h in hidden)
        specs = [LayerSpec("dense", h, self.activation) for h in self.hidden_sizes]
        specs.append(LayerSpec("dense", q, "linear"))
        built = build_sequential(specs, (n_in,), np.random.default_rng(seed))
        super().__init__(built.layers, (n_in,), specs)
        self.n_in, self.q = n_in, q

    def config(self) -> dict:
        return {"n_in": self.n_in, "q": self.q, "hidden": list(self.hidden_sizes), "activation": self.activation}

    @classmethod
    def from_config(cls, cfg: dict) -> "FfnnModel":
        return cls(cfg["n_in"], cfg["q"], cfg["hidden"], cfg["activation"])


def build_ffnn(xi: int, q: int, hidden: Sequence[int] = (50,), activation: str = "leaky_relu",
               seed: int = 0) -> FfnnModel:
    return FfnnModel(xi + 1, q, hidden, activation, seed)


def ffnn_inputs(times, mus) -> np.ndarray:
    """Rows ``[t_i, mu_j]`` ordered parameter-major, time-minor."""
    times = np.asarray(times, dtype=np.float64).ravel()
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))
    m, nt = mus.shape[0], times.size
    return np.concatenate([np.tile(times, m)[:, None], np.repeat(mus, nt, axis=0)], axis=1)


def train_ffnn(model: FfnnModel, inputs, targets, *, epochs: int = 1000, batch_size: int = 1,
               lr: float = 0.2, seed: int = 0, val_fraction: float = 0.1) -> History:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise ValueError("empty FFNN training set")
    return train_model(model, inputs, targets, epochs=epochs, batch_size=batch_size, lr=lr,
                       seed=seed, val_fraction=val_fraction, loss=mse_loss)


# --------------------------------------------------------------------------- activation search

class NasFailed(RuntimeError):
    """Every search trial diverged."""


@dataclass
class NasTrial:
    activation: str
    train_loss: float
    val_loss: float
    diverged: bool = False
    history: History | None = field(default=None, repr=False)


@dataclass
class NasReport:
    trials: list[NasTrial]

    @property
    def winner(self) -> str:
        return select_winner(self.trials)

    def to_rows(self) -> list[dict]:
        win = self.winner
        return [
            {"activation": t.activation, "train_loss": t.train_loss, "val_loss": t.val_loss,
             "winner": int(t.activation == win)}
            for t in self.trials
        ]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["activation", "train_loss", "val_loss", "winner"])
            w.writeheader()
            for row in self.to_rows():
                w.writerow({**row, "train_loss": repr(row["train_loss"]), "val_loss": repr(row["val_loss"])})


def select_winner(trials: Sequence[NasTrial]) -> str:
    """Minimum validation loss; ties go to lower training loss, then to the earlier candidate."""
    done = [(t.val_loss, t.train_loss, k, t.activation) for k, t in enumerate(trials)
            if not t.diverged and np.isfinite(t.val_loss)]
    if not done:
        raise NasFailed("no completed trials: " + ", ".join(t.activation for t in trials))
    return min(done)[3]


def nas_search(candidates: Sequence[str], inputs, targets, *, hidden: Sequence[int] = (50,),
               epochs: int = 1000, batch_size: int = 1, lr: float = 0.2, seed: int = 0,
               val_fraction: float = 0.1) -> NasReport:
    """Train one FFNN per candidate activation with identical seeds and data split."""
    if not candidates:
        raise ValueError("need at least one candidate activation")
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    trials = []
    for name in candidates:
        model = FfnnModel(inputs.shape[1], targets.shape[1], hidden, name, seed)
        try:
            hist = train_ffnn(model, inputs, targets, epochs=epochs, batch_size=batch_size, lr=lr,
                              seed=seed, val_fraction=val_fraction)
        except TrainingDiverged:
            trials.append(NasTrial(act.canonical(name), float("nan"), float("nan"), diverged=True))
            continue
        trials.append(NasTrial(act.canonical(name), hist.best_train, hist.best_val, history=hist))
    report = NasReport(trials)
    report.winner  # raises NasFailed when every trial diverged
    return report
