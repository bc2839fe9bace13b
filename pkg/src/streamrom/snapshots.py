"""Snapshot generation, assembly, partitioning, scaling and file I/O.

The convection-diffusion benchmark is generated from its closed-form
solution on a uniform 2-D grid. Snapshot columns follow the usual
ordering: all time steps of the first parameter, then all time steps of the
second, and so on.
"""
from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import qmc

__all__ = [
    "Grid2D",
    "ParameterSet",
    "SnapshotSet",
    "Scalers",
    "SnapshotFormatError",
    "lhs_sample",
    "sample_parameters",
    "cd_analytic_field",
    "cd_boundary_x",
    "cd_initial_field",
    "cd_time_grid",
    "generate_cd_snapshots",
    "build_snapshot_matrix",
    "partition_times",
    "fit_standardizer",
    "fit_normalizer",
    "write_snapshot_file",
    "read_snapshot_file",
    "write_snapshot_csv",
    "read_snapshot_csv",
]

MAGIC = b"FSVD"
FORMAT_VERSION = 1
STD_GUARD = 1e-12


class SnapshotFormatError(ValueError):
    """Malformed, truncated or inconsistent snapshot file."""


@dataclass(frozen=True)
class Grid2D:
    nx: int = 64
    ny: int = 64
    x_min: float = 0.0
    x_max: float = 1.0
    y_min: float = 0.0
    y_max: float = 1.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("a grid needs at least two nodes per axis")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("grid bounds must be increasing")

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def hx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened node coordinates; node index = ix * ny + iy."""
        x = np.linspace(self.x_min, self.x_max, self.nx)
        y = np.linspace(self.y_min, self.y_max, self.ny)
        X, Y = np.meshgrid(x, y, indexing="ij")
        return X.ravel(), Y.ravel()

    def node_index(self, ix: int, iy: int) -> int:
        return ix * self.ny + iy


@dataclass
class ParameterSet:
    training: np.ndarray
    testing: np.ndarray
    bounds: np.ndarray

    def __post_init__(self):
        self.training = np.atleast_2d(np.asarray(self.training, dtype=np.float64))
        self.testing = np.asarray(self.testing, dtype=np.float64).reshape(-1, self.training.shape[1])
        self.bounds = np.asarray(self.bounds, dtype=np.float64)
        for name, arr in (("training", self.training), ("testing", self.testing)):
            if arr.size and (np.any(arr < self.bounds[:, 0]) or np.any(arr > self.bounds[:, 1])):
                raise ValueError(f"{name} parameters fall outside the parameter space")
        if self.testing.size:
            same = (self.training[:, None, :] == self.testing[None, :, :]).all(-1)
            if same.any():
                raise ValueError("training and testing parameters must be disjoint")

    @property
    def dim(self) -> int:
        return self.training.shape[1]


@dataclass
class SnapshotSet:
    """Snapshot data with shape ``(components, m, N_t, N_h)``.

    ``matrix(c)`` returns the ``N_h x (m * N_t)`` snapshot matrix of component
    ``c`` with parameter-major, time-minor column order.
    """

    data: np.ndarray
    times: np.ndarray
    parameters: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 3:
            self.data = self.data[None]
        if self.data.ndim != 4:
            raise ValueError("snapshot data must have shape (components, m, N_t, N_h)")
        self.times = np.asarray(self.times, dtype=np.float64).ravel()
        self.parameters = np.atleast_2d(np.asarray(self.parameters, dtype=np.float64))
        c, m, nt, nh = self.data.shape
        if self.times.size != nt:
            raise ValueError(f"{self.times.size} time stamps for {nt} time steps")
        if self.parameters.shape[0] != m:
            raise ValueError(f"{self.parameters.shape[0]} parameter vectors for {m} parameters")
        if nt > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("time stamps must be strictly increasing")

    @property
    def n_components(self) -> int:
        return self.data.shape[0]

    @property
    def m(self) -> int:
        return self.data.shape[1]

    @property
    def n_times(self) -> int:
        return self.data.shape[2]

    @property
    def n_nodes(self) -> int:
        return self.data.shape[3]

    @property
    def n_columns(self) -> int:
        return self.m * self.n_times

    def matrix(self, component: int = 0) -> np.ndarray:
        return self.data[component].reshape(self.n_columns, self.n_nodes).T

    def column_index(self, time_index: int, param_index: int) -> int:
        return param_index * self.n_times + time_index

    def block(self, param_index: int, time_indices, component: int = 0) -> np.ndarray:
        return self.data[component, param_index, list(time_indices)].T

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.data, self.times, self.parameters):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


# --------------------------------------------------------------------------- sampling

def lhs_sample(bounds, count: int, seed: int | None = None) -> np.ndarray:
    """Latin hypercube sample of ``count`` points within per-component ``bounds``."""
    b = np.atleast_2d(np.asarray(bounds, dtype=np.float64))
    if b.shape[1] != 2 or np.any(~np.isfinite(b)) or np.any(b[:, 1] <= b[:, 0]):
        raise ValueError("bounds must be finite (lo, hi) pairs with lo < hi")
    if count < 1:
        raise ValueError("count must be >= 1")
    sampler = qmc.LatinHypercube(d=b.shape[0], seed=np.random.default_rng(seed))
    unit = sampler.random(count)
    return qmc.scale(unit, b[:, 0], b[:, 1])


def sample_parameters(bounds, m: int, n: int, seed: int | None = None) -> ParameterSet:
    """Training and testing sets from two independent Latin hypercube draws."""
    rng = np.random.default_rng(seed)
    train_seed, test_seed = rng.integers(0, 2**32, size=2)
    train = lhs_sample(bounds, m, int(train_seed))
    test = lhs_sample(bounds, n, int(test_seed)) if n > 0 else np.empty((0, train.shape[1]))
    return ParameterSet(training=train, testing=test, bounds=np.atleast_2d(bounds))


# --------------------------------------------------------------------------- CD benchmark

def cd_analytic_field(grid: Grid2D, velocity, t: float) -> np.ndarray:
    """Closed-form concentration of the 2-D convection-diffusion benchmark at time ``t``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    vx, vy = (float(v) for v in velocity)
    X, Y = grid.coordinates()
    spread = 1.0 + 4.0 * t
    return np.exp(-((X - vx * t - 0.5) ** 2 + (Y - vy * t - 0.5) ** 2) / spread) / spread


def cd_initial_field(grid: Grid2D) -> np.ndarray:
    X, Y = grid.coordinates()
    return np.exp(-((X - 0.5) ** 2) - (Y - 0.5) ** 2)


def cd_boundary_x(y, velocity, t: float, side: int) -> np.ndarray:
    """Dirichlet data on the ``x = side`` edge (``side`` in {0, 1})."""
    vx, vy = (float(v) for v in velocity)
    y = np.asarray(y, dtype=np.float64)
    spread = 1.0 + 4.0 * t
    return np.exp(-((side - vx * t - 0.5) ** 2 + (y - vy * t - 0.5) ** 2) / spread) / spread


def cd_time_grid(T: float = 0.0075, n_times: int = 75) -> np.ndarray:
    """``n_times`` equispaced stamps in ``(0, T]``."""
    dt = T / n_times
    return dt * np.arange(1, n_times + 1)


def generate_cd_snapshots(grid: Grid2D, velocities, times) -> SnapshotSet:
    velocities = np.atleast_2d(np.asarray(velocities, dtype=np.float64))
    times = np.asarray(times, dtype=np.float64)
    data = np.empty((1, velocities.shape[0], times.size, grid.n_nodes))
    for j, v in enumerate(velocities):
        for i, t in enumerate(times):
            data[0, j, i] = cd_analytic_field(grid, v, t)
    return SnapshotSet(data=data, times=times, parameters=velocities)


# --------------------------------------------------------------------------- assembly

def build_snapshot_matrix(fields: Sequence[Sequence], times, parameters) -> SnapshotSet:
    """Assemble nested ``fields[param][time]`` arrays into a :class:`SnapshotSet`.

    Each cell is a length-``N_h`` vector or a ``(components, N_h)`` array.
    """
    parameters = np.atleast_2d(np.asarray(parameters, dtype=np.float64))
    times = np.asarray(times, dtype=np.float64).ravel()
    if len(fields) != parameters.shape[0]:
        raise ValueError(f"got fields for {len(fields)} parameters, expected {parameters.shape[0]}")
    shape = None
    cells = []
    for j, row in enumerate(fields):
        if len(row) != times.size:
            raise ValueError(f"parameter {j}: {len(row)} time cells, expected {times.size}")
        for i, cell in enumerate(row):
            if cell is None:
                raise ValueError(f"missing snapshot for parameter {j}, time {i}")
            arr = np.atleast_2d(np.asarray(cell, dtype=np.float64))
            if shape is None:
                shape = arr.shape
            elif arr.shape != shape:
                raise ValueError(f"snapshot (param {j}, time {i}) has shape {arr.shape}, expected {shape}")
            cells.append(arr)
    stacked = np.stack(cells).reshape(parameters.shape[0], times.size, *shape)
    return SnapshotSet(data=np.moveaxis(stacked, 2, 0), times=times, parameters=parameters)


def partition_times(n_times: int, s: int) -> list[range]:
    """Split ``range(n_times)`` into consecutive subsets of ``s`` indices."""
    if s < 1 or n_times < 1:
        raise ValueError("n_times and s must be positive")
    if n_times % s:
        raise ValueError(
            f"N_t={n_times} is not divisible by s={s}; pad the time series or pick s dividing N_t"
        )
    return [range(v * s, (v + 1) * s) for v in range(n_times // s)]


# --------------------------------------------------------------------------- scaling

@dataclass
class Scalers:
    """Feature-wise standardization of projected data and min-max normalization of latents.

    Arrays are laid out with samples along axis 0.
    """

    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    z_min: np.ndarray | None = None
    z_max: np.ndarray | None = None
    epsilon_guard: float = STD_GUARD

    def standardize(self, x):
        den = self._std_denominator()
        return (np.asarray(x, dtype=np.float64) - self.mean) / den

    def destandardize(self, x):
        den = self._std_denominator()
        return np.asarray(x, dtype=np.float64) * den + self.mean

    def normalize(self, z):
        den = self._range_denominator()
        return (np.asarray(z, dtype=np.float64) - self.z_min) / den

    def denormalize(self, z):
        den = self._range_denominator()
        return np.asarray(z, dtype=np.float64) * den + self.z_min

    def _std_denominator(self):
        if self.mean is None:
            raise RuntimeError("standardizer has not been fitted")
        return np.maximum(self.std, self.epsilon_guard)

    def _range_denominator(self):
        if self.z_min is None:
            raise RuntimeError("normalizer has not been fitted")
        return np.maximum(self.z_max - self.z_min, self.epsilon_guard)


def fit_standardizer(data, scalers: Scalers | None = None) -> Scalers:
    """Fit mean/std per feature over all training samples (rows)."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("cannot fit a standardizer on empty data")
    out = scalers if scalers is not None else Scalers()
    out.mean = x.mean(axis=0)
    out.std = x.std(axis=0)
    return out


def fit_normalizer(latents, scalers: Scalers | None = None) -> Scalers:
    """Fit per-component min/max of the training latents."""
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[0] == 0:
        raise ValueError("cannot fit a normalizer on empty data")
    out = scalers if scalers is not None else Scalers()
    out.z_min = z.min(axis=0)
    out.z_max = z.max(axis=0)
    return out


# --------------------------------------------------------------------------- binary I/O

_HEADER = struct.Struct("<4sI5Q")


def write_snapshot_file(snapshots: SnapshotSet, path) -> str:
    """Write the little-endian binary container; returns the sha256 of the file bytes."""
    c, m, nt, nh = snapshots.data.shape
    xi = snapshots.parameters.shape[1]
    payload = b"".join([
        _HEADER.pack(MAGIC, FORMAT_VERSION, nh, nt, m, c, xi),
        np.ascontiguousarray(snapshots.parameters, dtype="<f8").tobytes(),
        np.ascontiguousarray(snapshots.times, dtype="<f8").tobytes(),
        np.ascontiguousarray(snapshots.data, dtype="<f8").tobytes(),
    ])
    Path(path).write_bytes(payload)
    return hashlib.sha256(payload).hexdigest()


def read_snapshot_file(path) -> SnapshotSet:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SnapshotFormatError("file too short for a snapshot header")
    magic, version, nh, nt, m, c, xi = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise SnapshotFormatError(f"unsupported format version {version}")
    if min(nh, nt, m, c, xi) < 1:
        raise SnapshotFormatError("zero dimension in header")
    counts = (xi * m, nt, c * m * nt * nh)
    expected = _HEADER.size + 8 * sum(counts)
    if len(raw) != expected:
        raise SnapshotFormatError(f"expected {expected} bytes, found {len(raw)} (truncated or padded file)")
    offset = _HEADER.size
    arrays = []
    for n in counts:
        arrays.append(np.frombuffer(raw, dtype="<f8", count=n, offset=offset).astype(np.float64))
        offset += 8 * n
    params, times, data = arrays
    try:
        return SnapshotSet(
            data=data.reshape(c, m, nt, nh),
            times=times,
            parameters=params.reshape(m, xi),
        )
    except ValueError as exc:
        raise SnapshotFormatError(str(exc)) from exc


def write_snapshot_csv(snapshots: SnapshotSet, path) -> None:
    """One column per snapshot; header cells are ``"t,mu_1,...,mu_xi"``."""
    if snapshots.n_components != 1:
        raise ValueError("CSV export supports single-component snapshots only")
    header = []
    for j in range(snapshots.m):
        for t in snapshots.times:
            header.append(",".join(repr(float(v)) for v in (t, *snapshots.parameters[j])))
    S = snapshots.matrix(0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in S:
            w.writerow([repr(float(v)) for v in row])


def read_snapshot_csv(path) -> SnapshotSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SnapshotFormatError("empty CSV file")
    try:
        labels = [tuple(float(v) for v in cell.split(",")) for cell in rows[0]]
        values = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise SnapshotFormatError(f"unparseable CSV: {exc}") from exc
    if values.ndim != 2 or values.shape[1] != len(labels):
        raise SnapshotFormatError("CSV rows do not match the header width")
    if len({len(lab) for lab in labels}) != 1 or len(labels[0]) < 2:
        raise SnapshotFormatError("header cells must all read 't,mu_1,...'")
    params: list[tuple] = []
    times_by_param: dict[tuple, list[float]] = {}
    for lab in labels:
        mu = lab[1:]
        if mu not in times_by_param:
            params.append(mu)
            times_by_param[mu] = []
        times_by_param[mu].append(lab[0])
    times = times_by_param[params[0]]
    if any(times_by_param[p] != times for p in params):
        raise SnapshotFormatError("every parameter must carry the same time stamps")
    nt = len(times)
    if any(labels[j * nt + i][1:] != p for j, p in enumerate(params) for i in range(nt)):
        raise SnapshotFormatError("columns must be grouped by parameter")
    data = values.T.reshape(len(params), nt, values.shape[0])
    return SnapshotSet(data=data[None], times=np.array(times), parameters=np.array(params))
