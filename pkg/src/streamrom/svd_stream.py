"""Incremental truncated SVD over column blocks of a snapshot matrix.

Each update absorbs a new block ``E`` into the running factorization
``A ~ U diag(sigma) V^T``: the part of ``E`` outside ``span(U)`` is
QR-factorised, a small ``(k+s) x (k+s)`` core matrix is decomposed, the
basis is rotated and the spectrum re-truncated with the global tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .linalg import as_matrix, dense_svd, householder_qr, orthonormality_error, truncate_rank

__all__ = [
    "SvdState",
    "CompressionReport",
    "svd_init",
    "svd_update",
    "stream_svd",
    "project",
    "reconstruct",
    "compression_report",
]

ORTHO_TOL = 1e-10
RESIDUAL_SKIP = 1e-13


@dataclass(frozen=True)
class SvdState:
    """Running truncated SVD.

    ``history`` holds one ``(k, cols_seen, cpr)`` record per absorbed block.
    ``V`` is only carried when the state was created with ``keep_v=True``.
    """

    U: np.ndarray
    sigma: np.ndarray
    eps: float
    cols_seen: int
    V: np.ndarray | None = None
    history: tuple[tuple[int, int, float], ...] = field(default_factory=tuple)

    @property
    def k(self) -> int:
        return int(self.sigma.size)

    @property
    def n_rows(self) -> int:
        return int(self.U.shape[0])

    @property
    def cpr(self) -> float:
        return self.k / self.cols_seen


@dataclass(frozen=True)
class CompressionReport:
    cpr_curve: list[tuple[int, float]]
    eps_l2_curve: list[tuple[int, float]]
    final_rank: int


def _record(state_history, k, cols):
    return tuple(state_history) + ((k, cols, k / cols),)


def svd_init(first_block, eps: float, keep_v: bool = False) -> SvdState:
    """Truncated SVD of the first block."""
    A = np.asarray(first_block, dtype=np.float64)
    if A.size == 0:
        raise ValueError("first block is empty")
    A = as_matrix(A, "first block")
    if eps <= 0:
        raise ValueError("eps must be positive")
    f = dense_svd(A)
    k = truncate_rank(f.sigma, eps)
    f = f.truncated(k)
    return SvdState(
        U=f.U,
        sigma=f.sigma,
        eps=float(eps),
        cols_seen=A.shape[1],
        V=f.V if keep_v else None,
        history=_record((), k, A.shape[1]),
    )


def svd_update(state: SvdState, E) -> SvdState:
    """Absorb block ``E`` (``n_rows x s``) and return the updated state."""
    E = as_matrix(E, "update block")
    if E.shape[0] != state.n_rows:
        raise ValueError(f"block has {E.shape[0]} rows, basis has {state.n_rows}")
    U, sigma = state.U, state.sigma
    k, s = sigma.size, E.shape[1]

    C = U.T @ E
    residual = E - U @ C
    # second Gram-Schmidt pass keeps the residual orthogonal to U
    C2 = U.T @ residual
    residual -= U @ C2
    C += C2

    e_norm = np.linalg.norm(E)
    expand = (
        np.linalg.norm(residual) > RESIDUAL_SKIP * e_norm
        and residual.shape[0] >= s
    )
    if expand:
        Q, R = householder_qr(residual)
        core = np.zeros((k + s, k + s))
        core[:k, :k] = np.diag(sigma)
        core[:k, k:] = C
        core[k:, k:] = R
        basis = np.hstack([U, Q])
    else:
        core = np.hstack([np.diag(sigma), C])
        basis = U

    f = dense_svd(core)
    k_new = min(truncate_rank(f.sigma, state.eps), basis.shape[1])
    U_new = basis @ f.U[:, :k_new]
    sigma_new = f.sigma[:k_new].copy()

    V_new = None
    if state.V is not None:
        n_old = state.V.shape[0]
        lifted = np.zeros((n_old + s, k + s))
        lifted[:n_old, :k] = state.V
        lifted[n_old:, k:] = np.eye(s)
        V_new = lifted @ f.V[:, :k_new]

    if orthonormality_error(U_new) > ORTHO_TOL:
        Qo, Ro = householder_qr(U_new)
        U_new = Qo

    cols = state.cols_seen + s
    return replace(
        state,
        U=U_new,
        sigma=sigma_new,
        V=V_new,
        cols_seen=cols,
        history=_record(state.history, k_new, cols),
    )


def stream_svd(blocks: Iterable, eps: float, keep_v: bool = False) -> SvdState:
    """Run ``svd_init`` on the first block and ``svd_update`` on the rest."""
    state = None
    for block in blocks:
        state = svd_init(block, eps, keep_v) if state is None else svd_update(state, block)
    if state is None:
        raise ValueError("no blocks supplied")
    return state


def project(U, u_h) -> np.ndarray:
    """Reduced coordinates ``U^T u_h``; ``u_h`` may be a vector or a matrix of columns."""
    U = np.asarray(U, dtype=np.float64)
    u_h = np.asarray(u_h, dtype=np.float64)
    if u_h.shape[0] != U.shape[0]:
        raise ValueError(f"field length {u_h.shape[0]} does not match basis rows {U.shape[0]}")
    return U.T @ u_h


def reconstruct(U, u_n) -> np.ndarray:
    """Lift reduced coordinates back to the full space: ``U u_n``."""
    U = np.asarray(U, dtype=np.float64)
    u_n = np.asarray(u_n, dtype=np.float64)
    if u_n.shape[0] != U.shape[1]:
        raise ValueError(f"reduced length {u_n.shape[0]} does not match basis rank {U.shape[1]}")
    return U @ u_n


def compression_report(state: SvdState, test_snapshots=None) -> CompressionReport:
    """CPR per absorbed block and, if snapshots are given, the l2 projection error per column."""
    cpr_curve = [(b + 1, cpr) for b, (_, _, cpr) in enumerate(state.history)]
    eps_curve: list[tuple[int, float]] = []
    if test_snapshots is not None:
        S = as_matrix(test_snapshots, "test snapshots")
        approx = reconstruct(state.U, project(state.U, S))
        num = np.linalg.norm(S - approx, axis=0)
        den = np.linalg.norm(S, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            err = np.where(den > 0, num / den, 0.0)
        eps_curve = [(i, float(e)) for i, e in enumerate(err)]
    return CompressionReport(cpr_curve=cpr_curve, eps_l2_curve=eps_curve, final_rank=state.k)


def blocks_from_matrix(S, partition: Sequence[Sequence[int]] | None = None, block_size: int | None = None):
    """Yield column blocks of ``S`` either by an explicit partition or a fixed block size."""
    S = np.asarray(S, dtype=np.float64)
    if partition is None:
        if block_size is None:
            raise ValueError("give a partition or a block size")
        partition = [range(i, min(i + block_size, S.shape[1])) for i in range(0, S.shape[1], block_size)]
    for cols in partition:
        yield S[:, list(cols)]
