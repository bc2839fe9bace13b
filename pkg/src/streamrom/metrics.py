"""Error indicators between reference and approximate fields.

All scalar indicators reduce over the nodes of a single time step. A field
is an ``(N_h,)`` array, or ``(N_h, components)`` for vector fields, in which
case the per-node magnitude is the Euclidean norm over components.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = ["ErrorReport", "eps_abs", "eps_rel", "eps_nrms", "eps_l2", "error_curves", "write_error_csv"]


def _pair(u, u_tilde):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(u_tilde, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"field shapes differ: {u.shape} vs {v.shape}")
    return u, v


def _node_magnitude(a):
    return np.abs(a) if a.ndim == 1 else np.linalg.norm(a, axis=-1)


def eps_abs(u, u_tilde) -> np.ndarray:
    """Per-node absolute error."""
    u, v = _pair(u, u_tilde)
    return _node_magnitude(u - v)


def eps_rel(u, u_tilde) -> float:
    """Sum of per-node error magnitudes over the sum of per-node reference magnitudes."""
    u, v = _pair(u, u_tilde)
    den = float(np.sum(_node_magnitude(u)))
    if den == 0.0:
        raise ZeroDivisionError("reference field is identically zero")
    return float(np.sum(_node_magnitude(u - v))) / den


def eps_nrms(u, u_tilde) -> float:
    """Root-mean-square error over nodes divided by the reference range."""
    u, v = _pair(u, u_tilde)
    span = float(np.max(u) - np.min(u))
    if span == 0.0:
        raise ZeroDivisionError("reference field has zero range")
    d = u - v
    rms = np.sqrt(np.sum(d * d) / u.shape[0])
    return float(rms) / span


def eps_l2(u_n, u_n_tilde) -> float:
    """Relative Euclidean error."""
    u, v = _pair(u_n, u_n_tilde)
    den = float(np.linalg.norm(u))
    if den == 0.0:
        raise ZeroDivisionError("reference vector is zero")
    return float(np.linalg.norm(u - v)) / den


@dataclass
class ErrorReport:
    times: np.ndarray
    eps_rel: np.ndarray
    eps_nrms: np.ndarray
    eps_l2: np.ndarray
    eps_abs: np.ndarray = field(repr=False)

    def at(self, t: float) -> dict:
        k = int(np.argmin(np.abs(self.times - t)))
        return {"t": float(self.times[k]), "eps_rel": float(self.eps_rel[k]),
                "eps_nrms": float(self.eps_nrms[k]), "eps_l2": float(self.eps_l2[k])}


def error_curves(truth, prediction, times) -> ErrorReport:
    """Evaluate every indicator per time step; fields are stacked as ``(N_t, N_h[, components])``."""
    truth, pred = _pair(truth, prediction)
    times = np.asarray(times, dtype=np.float64)
    if truth.shape[0] != times.size:
        raise ValueError("one field per time stamp expected")
    return ErrorReport(
        times=times,
        eps_rel=np.array([eps_rel(a, b) for a, b in zip(truth, pred)]),
        eps_nrms=np.array([eps_nrms(a, b) for a, b in zip(truth, pred)]),
        eps_l2=np.array([eps_l2(a, b) for a, b in zip(truth, pred)]),
        eps_abs=np.stack([eps_abs(a, b) for a, b in zip(truth, pred)]),
    )


def write_error_csv(report: ErrorReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "eps_rel", "eps_nrms"])
        for t, r, n in zip(report.times, report.eps_rel, report.eps_nrms):
            w.writerow([repr(float(t)), repr(float(r)), repr(float(n))])
