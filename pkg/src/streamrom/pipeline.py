"""Offline training, online prediction and model-bundle persistence.

Offline: sample parameters, stream snapshot blocks ``(parameter j, time subset v)``
through the incremental SVD, project, standardize, train the autoencoder,
normalize the latents, train the LSTM on sliding windows and the FFNN on the
first window. Online: the FFNN seeds ``w`` latent vectors, the LSTM rolls the
window forward, and the decoder plus basis lift latents back to full fields.

Network inputs use scaled coordinates: parameters map to [0, 1] over their
bounds and time is divided by the final training time.
"""
from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cae import CaeModel, build_cae, train_cae
from .config import ConfigError, PipelineConfig
from .dynamics import (
    FfnnModel,
    LstmModel,
    NasReport,
    build_ffnn,
    build_lstm,
    build_windows,
    ffnn_inputs,
    nas_search,
    train_ffnn,
    train_lstm,
)
from .nn.training import History, TrainingDiverged
from .snapshots import (
    Grid2D,
    Scalers,
    SnapshotSet,
    cd_analytic_field,
    cd_time_grid,
    fit_normalizer,
    fit_standardizer,
    partition_times,
    sample_parameters,
)
from .svd_stream import SvdState, svd_init, svd_update

__all__ = [
    "ModelBundle",
    "Prediction",
    "TrainingReport",
    "StageError",
    "StageDiverged",
    "BundleFormatError",
    "IncompleteBundle",
    "offline_train",
    "compress_stage",
    "cae_stage",
    "lstm_stage",
    "ffnn_stage",
    "reduced_training_data",
    "online_predict",
    "forecast",
    "benchmark_online",
    "save_bundle",
    "load_bundle",
    "bundle_bytes",
    "generate_training_data",
    "probe_traces",
    "write_probe_csv",
]


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class StageDiverged(StageError, TrainingDiverged):
    pass


class BundleFormatError(ValueError):
    pass


class IncompleteBundle(RuntimeError):
    pass


@dataclass
class ModelBundle:
    """Everything needed for online queries.

    ``bases`` holds one ``(N_h, n_c)`` basis per field component; reduced
    vectors are zero-padded to the common length ``n``.
    """

    config: PipelineConfig
    bases: list[np.ndarray]
    scalers: Scalers
    times: np.ndarray
    train_params: np.ndarray
    test_params: np.ndarray
    cae: CaeModel | None = None
    lstm: LstmModel | None = None
    ffnn: FfnnModel | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def n_components(self) -> int:
        return len(self.bases)

    @property
    def n(self) -> int:
        return max(U.shape[1] for U in self.bases)

    @property
    def ranks(self) -> list[int]:
        return [U.shape[1] for U in self.bases]

    @property
    def n_nodes(self) -> int:
        return self.bases[0].shape[0]

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else float(self.times[0])

    @property
    def is_complete(self) -> bool:
        return self.cae is not None and self.lstm is not None and self.ffnn is not None

    def scale_mu(self, mu) -> np.ndarray:
        b = np.asarray(self.config.data.bounds, dtype=np.float64)
        return (np.atleast_2d(np.asarray(mu, dtype=np.float64)) - b[:, 0]) / (b[:, 1] - b[:, 0])

    def scale_t(self, t) -> np.ndarray:
        return np.asarray(t, dtype=np.float64) / self.T


@dataclass
class TrainingReport:
    rank: int = 0
    svd_history: tuple = ()
    histories: dict[str, History] = field(default_factory=dict)
    seconds: dict[str, float] = field(default_factory=dict)
    nas: NasReport | None = None
    hfm_seconds_per_query: float | None = None

    def summary(self) -> dict:
        out = {"rank": self.rank, "seconds": dict(self.seconds)}
        for name, h in self.histories.items():
            out[f"{name}_best_train"] = h.best_train
            out[f"{name}_best_val"] = h.best_val
        if self.nas is not None:
            out["nas_winner"] = self.nas.winner
        if self.hfm_seconds_per_query is not None:
            out["hfm_seconds_per_query"] = self.hfm_seconds_per_query
        return out


# --------------------------------------------------------------------------- data

def generate_training_data(config: PipelineConfig) -> tuple[SnapshotSet, np.ndarray, float]:
    """Analytic CD snapshots for the LHS training parameters.

    Returns the snapshot set, the testing parameters and the mean wall time to
    produce one parameter's full trajectory (the HFM reference cost).
    """
    d = config.data
    params = sample_parameters(d.bounds, d.m, d.n_test, config.run.seed)
    grid = Grid2D(d.nx, d.ny)
    times = cd_time_grid(d.T, d.n_times)
    data = np.empty((1, d.m, d.n_times, grid.n_nodes))
    t0 = time.perf_counter()
    for j, v in enumerate(params.training):
        for i, t in enumerate(times):
            data[0, j, i] = cd_analytic_field(grid, v, t)
    per_query = (time.perf_counter() - t0) / d.m
    return SnapshotSet(data=data, times=times, parameters=params.training), params.testing, per_query


def _load_or_generate(config: PipelineConfig, snapshots: SnapshotSet | None):
    if snapshots is not None:
        return snapshots, np.empty((0, snapshots.parameters.shape[1])), config.run.hfm_seconds
    if config.data.snapshot_file:
        from .snapshots import read_snapshot_file

        snaps = read_snapshot_file(config.data.snapshot_file)
        return snaps, np.empty((0, snaps.parameters.shape[1])), config.run.hfm_seconds
    snaps, test, per_query = generate_training_data(config)
    return snaps, test, config.run.hfm_seconds or per_query


# --------------------------------------------------------------------------- stages

def compress_stage(config: PipelineConfig, snapshots: SnapshotSet) -> tuple[list[SvdState], np.ndarray]:
    """Streaming SVD over blocks in (parameter, time subset) order, one stream per component."""
    partition = partition_times(snapshots.n_times, config.svd.subset_size)
    states = []
    for c in range(snapshots.n_components):
        state = None
        for j in range(snapshots.m):
            for cols in partition:
                block = snapshots.block(j, cols, c)
                state = (svd_init(block, config.svd.eps, config.svd.keep_v) if state is None
                         else svd_update(state, block))
        states.append(state)
    return states, reduced_training_data([s.U for s in states], snapshots)


def reduced_training_data(bases, snapshots: SnapshotSet) -> np.ndarray:
    """Projected snapshots as ``(m * N_t, C, n)``, zero-padded per component."""
    n = max(U.shape[1] for U in bases)
    out = np.zeros((snapshots.n_columns, len(bases), n))
    for c, U in enumerate(bases):
        out[:, c, :U.shape[1]] = (U.T @ snapshots.matrix(c)).T
    return out


def _flat(bundle: ModelBundle, reduced):
    return reduced.reshape(reduced.shape[0], -1)


def _cae_view(bundle: ModelBundle, flat):
    C, n = bundle.n_components, bundle.n
    x = flat.reshape(flat.shape[0], C, n)
    return x[:, 0, :] if C == 1 else x


def _standardized(bundle: ModelBundle, reduced) -> np.ndarray:
    return _cae_view(bundle, bundle.scalers.standardize(_flat(bundle, reduced)))


def cae_stage(bundle: ModelBundle, reduced) -> History:
    cfg = bundle.config.cae
    if cfg.q > bundle.n:
        raise StageError("cae", f"latent size q={cfg.q} exceeds basis rank n={bundle.n}")
    bundle.cae = build_cae(bundle.n, cfg.q, cfg.preset, side=cfg.side, channels=bundle.n_components,
                           seed=bundle.config.run.seed)
    return train_cae(bundle.cae, _standardized(bundle, reduced), epochs=cfg.epochs, batch_size=cfg.batch_size,
                     lr=cfg.lr, seed=bundle.config.run.seed, val_fraction=cfg.val_fraction)


def _normalized_latents(bundle: ModelBundle, reduced) -> np.ndarray:
    """Encode the training set, fit the latent min-max scaler, return ``(m, N_t, q)``."""
    if bundle.cae is None:
        raise IncompleteBundle("the autoencoder must be trained before the latent models")
    z = bundle.cae.encode_batch(_standardized(bundle, reduced))
    fit_normalizer(z, bundle.scalers)
    m = bundle.train_params.shape[0]
    return bundle.scalers.normalize(z).reshape(m, bundle.times.size, -1)


def lstm_stage(bundle: ModelBundle, reduced) -> History:
    cfg = bundle.config.lstm
    z = _normalized_latents(bundle, reduced)
    ds = build_windows(z, bundle.scale_mu(bundle.train_params), cfg.window)
    bundle.lstm = build_lstm(z.shape[2], bundle.train_params.shape[1], cfg.hidden, cfg.head_activation,
                             seed=bundle.config.run.seed)
    return train_lstm(bundle.lstm, ds, epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                      seed=bundle.config.run.seed, val_fraction=cfg.val_fraction)


def _ffnn_data(bundle: ModelBundle, reduced):
    w = bundle.config.lstm.window
    z = _normalized_latents(bundle, reduced)
    x = ffnn_inputs(bundle.scale_t(bundle.times[:w]), bundle.scale_mu(bundle.train_params))
    return x, z[:, :w].reshape(-1, z.shape[2])


def nas_stage(bundle: ModelBundle, reduced) -> NasReport:
    cfg, f = bundle.config.nas, bundle.config.ffnn
    x, y = _ffnn_data(bundle, reduced)
    return nas_search(cfg.candidates, x, y, hidden=f.hidden, epochs=f.epochs, batch_size=f.batch_size,
                      lr=f.lr, seed=bundle.config.run.seed, val_fraction=f.val_fraction)


def ffnn_stage(bundle: ModelBundle, reduced, activation: str | None = None) -> History:
    f = bundle.config.ffnn
    x, y = _ffnn_data(bundle, reduced)
    bundle.ffnn = build_ffnn(bundle.train_params.shape[1], y.shape[1], f.hidden, activation or f.activation,
                             seed=bundle.config.run.seed)
    return train_ffnn(bundle.ffnn, x, y, epochs=f.epochs, batch_size=f.batch_size, lr=f.lr,
                      seed=bundle.config.run.seed, val_fraction=f.val_fraction)


def _run_stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except TrainingDiverged as exc:
        raise StageDiverged(name, str(exc)) from exc
    except (ValueError, RuntimeError) as exc:
        raise StageError(name, str(exc)) from exc


def offline_train(config: PipelineConfig, snapshots: SnapshotSet | None = None,
                  stages=("svd", "cae", "lstm", "nas", "ffnn")) -> tuple[ModelBundle, TrainingReport]:
    """Run the offline phase; ``snapshots`` overrides generation from the config."""
    try:
        config.validate()
    except ConfigError as exc:
        raise StageError("config", str(exc)) from exc
    report = TrainingReport()
    t0 = time.perf_counter()
    snaps, test_params, hfm = _run_stage("data", _load_or_generate, config, snapshots)
    report.seconds["data"] = time.perf_counter() - t0
    report.hfm_seconds_per_query = hfm
    if snaps.n_times != config.data.n_times:
        raise StageError("data", f"snapshots carry {snaps.n_times} time steps, config says {config.data.n_times}")

    t0 = time.perf_counter()
    states, reduced = _run_stage("svd", compress_stage, config, snaps)
    report.seconds["svd"] = time.perf_counter() - t0
    report.rank = max(s.k for s in states)
    report.svd_history = states[0].history
    bundle = ModelBundle(
        config=config,
        bases=[s.U for s in states],
        scalers=fit_standardizer(reduced.reshape(reduced.shape[0], -1)),
        times=snaps.times.copy(),
        train_params=snaps.parameters.copy(),
        test_params=test_params,
        provenance={"version": __version__, "seed": config.run.seed, "data_sha256": snaps.checksum()},
    )
    for name, fn in (("cae", cae_stage), ("lstm", lstm_stage)):
        if name in stages:
            t0 = time.perf_counter()
            report.histories[name] = _run_stage(name, fn, bundle, reduced)
            report.seconds[name] = time.perf_counter() - t0
    activation = None
    if "nas" in stages and config.nas.enabled:
        t0 = time.perf_counter()
        report.nas = _run_stage("nas", nas_stage, bundle, reduced)
        activation = report.nas.winner
        report.seconds["nas"] = time.perf_counter() - t0
    if "ffnn" in stages:
        t0 = time.perf_counter()
        report.histories["ffnn"] = _run_stage("ffnn", ffnn_stage, bundle, reduced, activation)
        report.seconds["ffnn"] = time.perf_counter() - t0
    return bundle, report


# --------------------------------------------------------------------------- online phase

@dataclass
class Prediction:
    """``fields`` is ``(steps, N_h)`` for scalar fields, ``(steps, N_h, C)`` otherwise."""

    mu: np.ndarray
    times: np.ndarray
    latents: np.ndarray
    fields: np.ndarray
    extrapolated: np.ndarray

    def to_snapshot_set(self) -> SnapshotSet:
        data = self.fields[None] if self.fields.ndim == 2 else np.moveaxis(self.fields, 2, 0)[:, None]
        if data.ndim == 3:
            data = data[None]
        return SnapshotSet(data=data, times=self.times, parameters=self.mu[None])


def _latent_rollout(bundle: ModelBundle, mu_s: np.ndarray, steps: int, timings: dict | None):
    w = bundle.config.lstm.window
    times = bundle.times[0] + bundle.dt * np.arange(steps)
    t0 = time.perf_counter()
    seed_times = times[:min(w, steps)]
    z = np.empty((steps, bundle.ffnn.q))
    z[:seed_times.size] = bundle.ffnn.forward(ffnn_inputs(bundle.scale_t(seed_times), mu_s))
    t1 = time.perf_counter()
    if steps > w:
        mu_rows = np.broadcast_to(mu_s, (w, mu_s.shape[1]))
        for i in range(w, steps):
            window = np.concatenate([z[i - w:i], mu_rows], axis=1)
            z[i] = bundle.lstm.forward(window[None])[0]
    t2 = time.perf_counter()
    if timings is not None:
        timings["ffnn"] = t1 - t0
        timings["lstm"] = t2 - t1
    return times, z


def _lift(bundle: ModelBundle, z_norm: np.ndarray, timings: dict | None) -> np.ndarray:
    t0 = time.perf_counter()
    u_std = bundle.cae.decode_batch(bundle.scalers.denormalize(z_norm))
    flat = bundle.scalers.destandardize(u_std.reshape(u_std.shape[0], -1))
    reduced = flat.reshape(flat.shape[0], bundle.n_components, bundle.n)
    t1 = time.perf_counter()
    comps = [reduced[:, c, :U.shape[1]] @ U.T for c, U in enumerate(bundle.bases)]
    fields = comps[0] if len(comps) == 1 else np.stack(comps, axis=-1)
    t2 = time.perf_counter()
    if timings is not None:
        timings["decoder"] = t1 - t0
        timings["lift"] = t2 - t1
    return fields


def _check_mu(bundle: ModelBundle, mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64).ravel()
    if mu.size != bundle.train_params.shape[1]:
        raise ValueError(f"parameter has {mu.size} entries, the model expects {bundle.train_params.shape[1]}")
    return mu


def online_predict(bundle: ModelBundle, mu, steps: int | None = None, timings: dict | None = None) -> Prediction:
    """Predict ``steps`` fields (default: the training horizon) for parameter ``mu``."""
    if not bundle.is_complete:
        missing = [k for k in ("cae", "lstm", "ffnn") if getattr(bundle, k) is None]
        raise IncompleteBundle("bundle lacks trained models: " + ", ".join(missing))
    mu = _check_mu(bundle, mu)
    steps = bundle.times.size if steps is None else int(steps)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    times, z = _latent_rollout(bundle, bundle.scale_mu(mu), steps, timings)
    fields = _lift(bundle, z, timings)
    extrapolated = times > bundle.T * (1 + 1e-12)
    return Prediction(mu=mu, times=times, latents=z, fields=fields, extrapolated=extrapolated)


def forecast(bundle: ModelBundle, mu, horizon: int) -> Prediction:
    """Autoregressive rollout for ``horizon`` steps; steps past the final training time are flagged."""
    if horizon < bundle.times.size:
        raise ValueError(f"forecast horizon {horizon} is shorter than the training horizon {bundle.times.size}")
    return online_predict(bundle, mu, horizon)


def benchmark_online(bundle: ModelBundle, mu, steps: int | None = None, repeats: int = 20,
                     hfm_seconds: float | None = None) -> dict:
    """Median per-stage online timings; speed-ups are HFM time over online time."""
    samples: dict[str, list[float]] = {}
    for _ in range(repeats):
        t = {}
        t0 = time.perf_counter()
        online_predict(bundle, mu, steps, timings=t)
        t["total"] = time.perf_counter() - t0
        for k, v in t.items():
            samples.setdefault(k, []).append(v)
    out = {f"{k}_seconds": float(np.median(v)) for k, v in samples.items()}
    if hfm_seconds:
        out["hfm_seconds"] = float(hfm_seconds)
        for k, v in samples.items():
            out[f"{k}_speedup"] = float(hfm_seconds / max(np.median(v), 1e-12))
    return out


def probe_traces(prediction: Prediction, nodes, truth=None) -> dict:
    """Time traces of the predicted (and optionally true) field at selected nodes."""
    nodes = [int(k) for k in nodes]
    out = {"t": prediction.times, "pred": prediction.fields[:, nodes]}
    if truth is not None:
        out["true"] = np.asarray(truth)[:, nodes]
    return out


def write_probe_csv(path, prediction: Prediction, nodes, truth=None) -> None:
    import csv

    tr = probe_traces(prediction, nodes, truth)
    header = ["t"] + [f"pred_{k}" for k in nodes] + ([f"true_{k}" for k in nodes] if truth is not None else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, t in enumerate(tr["t"]):
            row = [t, *np.ravel(tr["pred"][i])]
            if truth is not None:
                row += list(np.ravel(tr["true"][i]))
            w.writerow([repr(float(v)) for v in row])


# --------------------------------------------------------------------------- persistence
#
# Layout (little endian): magic "SRMB", u32 version, u64 JSON length, JSON
# header, u32 tensor count, then per tensor: u16 name length, name, u8 ndim,
# u64 dims, f64 payload. A 32-byte sha256 of everything before it closes the file.

BUNDLE_MAGIC = b"SRMB"
BUNDLE_VERSION = 1
_MODEL_KINDS = {"cae": CaeModel, "lstm": LstmModel, "ffnn": FfnnModel}


def _tensors(bundle: ModelBundle) -> dict[str, np.ndarray]:
    t = {f"basis.{c}": U for c, U in enumerate(bundle.bases)}
    t["times"] = bundle.times
    t["params.train"] = bundle.train_params
    t["params.test"] = bundle.test_params
    for key in ("mean", "std", "z_min", "z_max"):
        val = getattr(bundle.scalers, key)
        if val is not None:
            t[f"scalers.{key}"] = val
    for kind in _MODEL_KINDS:
        model = getattr(bundle, kind)
        if model is not None:
            for name, arr in model.state_dict().items():
                t[f"{kind}.{name}"] = arr
    return t


def bundle_bytes(bundle: ModelBundle) -> bytes:
    header = {
        "config": bundle.config.to_dict(),
        "models": {k: getattr(bundle, k).config() for k in _MODEL_KINDS if getattr(bundle, k) is not None},
        "provenance": bundle.provenance,
        "components": bundle.n_components,
    }
    hjson = json.dumps(header, sort_keys=True).encode()
    parts = [BUNDLE_MAGIC, struct.pack("<IQ", BUNDLE_VERSION, len(hjson)), hjson]
    tensors = _tensors(bundle)
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_bundle(bundle: ModelBundle, path) -> str:
    """Write the bundle; returns the hex sha256 stored in its trailer."""
    raw = bundle_bytes(bundle)
    Path(path).write_bytes(raw)
    return raw[-32:].hex()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise BundleFormatError("bundle is truncated")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def load_bundle(path) -> ModelBundle:
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 12 + 32:
        raise BundleFormatError("file too short for a bundle")
    if raw[:4] != BUNDLE_MAGIC:
        raise BundleFormatError(f"bad magic {raw[:4]!r}")
    body, digest = raw[:-32], raw[-32:]
    r = _Reader(body)
    r.take(4)
    version, hlen = r.unpack("<IQ")
    if version != BUNDLE_VERSION:
        raise BundleFormatError(f"unsupported bundle version {version}")
    if hashlib.sha256(body).digest() != digest:
        raise BundleFormatError("checksum mismatch (corrupt or truncated bundle)")
    try:
        header = json.loads(r.take(hlen))
    except ValueError as exc:
        raise BundleFormatError(f"unreadable header: {exc}") from exc
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q")
        n = int(np.prod(shape))
        tensors[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(body):
        raise BundleFormatError("trailing bytes after tensor table")

    def need(name):
        if name not in tensors:
            raise BundleFormatError(f"bundle is missing section {name!r}")
        return tensors[name]

    try:
        config = PipelineConfig.from_dict(header["config"])
        n_comp = int(header["components"])
    except (KeyError, ConfigError, TypeError) as exc:
        raise BundleFormatError(f"bad config section: {exc}") from exc
    scalers = Scalers(**{k: tensors.get(f"scalers.{k}") for k in ("mean", "std", "z_min", "z_max")})
    bundle = ModelBundle(
        config=config,
        bases=[need(f"basis.{c}") for c in range(n_comp)],
        scalers=scalers,
        times=need("times"),
        train_params=need("params.train"),
        test_params=need("params.test"),
        provenance=header.get("provenance", {}),
    )
    for kind, klass in _MODEL_KINDS.items():
        cfg = header.get("models", {}).get(kind)
        if cfg is None:
            continue
        model = klass.from_config(cfg)
        prefix = kind + "."
        state = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        names = {name for name, _, _ in model.named_parameters()}
        if names != set(state):
            raise BundleFormatError(f"{kind} tensors do not match its architecture")
        model.load_state_dict(state)
        setattr(bundle, kind, model)
    return bundle
