"""Dense linear-algebra kernels: Householder QR, one-sided Jacobi SVD, rank truncation.

Matrices are plain 2-D ``float64`` ndarrays. The kernels are written to be
accurate on the small inner problems of the streaming SVD update; they are
not meant to compete with LAPACK on large dense problems.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "SvdFactors",
    "ConvergenceError",
    "as_matrix",
    "householder_qr",
    "dense_svd",
    "truncate_rank",
    "orthonormality_error",
]

JACOBI_MAX_SWEEPS = 60
JACOBI_TOL = 1e-14


class ConvergenceError(RuntimeError):
    """Raised when the Jacobi sweeps do not converge within the sweep cap."""


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``M = U @ diag(sigma) @ V.T`` with ``sigma`` descending."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return self.sigma.size

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.V.T

    def truncated(self, k: int) -> "SvdFactors":
        return SvdFactors(self.U[:, :k], self.sigma[:k], self.V[:, :k])


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Validate and convert to a finite 2-D float64 array (a fresh copy is not forced)."""
    A = np.asarray(M, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and one column, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def orthonormality_error(Q: np.ndarray) -> float:
    """``max|Q^T Q - I|``."""
    G = Q.T @ Q
    G[np.diag_indices_from(G)] -= 1.0
    return float(np.max(np.abs(G))) if G.size else 0.0


def householder_qr(M, complete: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Householder QR of a tall matrix.

    Returns ``Q`` (rows x cols, orthonormal columns; rows x rows when
    ``complete``) and upper-triangular ``R`` (cols x cols) whose diagonal is
    nonnegative.
    """
    A = as_matrix(M).copy()
    m, n = A.shape
    if m < n:
        raise ValueError(f"householder_qr needs rows >= cols, got {m}x{n}")

    reflectors: list[np.ndarray | None] = []
    for j in range(n):
        x = A[j:, j]
        tail = np.linalg.norm(x[1:])
        if tail == 0.0:
            reflectors.append(None)
            continue
        normx = np.hypot(x[0], tail)
        alpha = -np.copysign(normx, x[0])
        v = x.copy()
        v[0] -= alpha
        v /= np.linalg.norm(v)
        A[j:, j:] -= 2.0 * np.outer(v, v @ A[j:, j:])
        A[j + 1:, j] = 0.0
        reflectors.append(v)

    R = np.triu(A[:n, :])
    Q = np.eye(m, m if complete else n)
    for j in range(n - 1, -1, -1):
        v = reflectors[j]
        if v is None:
            continue
        Q[j:, :] -= 2.0 * np.outer(v, v @ Q[j:, :])

    signs = np.where(np.diag(R) < 0.0, -1.0, 1.0)
    R *= signs[:, None]
    Q[:, :n] *= signs
    return Q, R


@lru_cache(maxsize=64)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Tournament schedule: ``n-1`` rounds of disjoint column pairs covering all pairs."""
    players = list(range(n + (n % 2)))
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        p, q = [], []
        for i in range(size // 2):
            a, b = players[i], players[size - 1 - i]
            if a < n and b < n:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _one_sided_jacobi(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalise the columns of ``A`` in place; returns (A, V) with A_in @ V = A_out."""
    n = A.shape[1]
    V = np.eye(n)
    if n == 1:
        return A, V
    schedule = _round_robin(n)
    # columns at roundoff level relative to the whole matrix are treated as converged
    floor = (np.finfo(np.float64).eps * np.linalg.norm(A)) ** 2
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p, q in schedule:
            ap, aq = A[:, p], A[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            active = (np.abs(gamma) > JACOBI_TOL * np.sqrt(alpha * beta)) & (np.minimum(alpha, beta) > floor)
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0.0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for M in (A, V):
                mp, mq = M[:, p], M[:, q]
                M[:, p] = c * mp - s * mq
                M[:, q] = s * mp + c * mq
        if not rotated:
            return A, V
    raise ConvergenceError(f"Jacobi SVD did not converge in {JACOBI_MAX_SWEEPS} sweeps")


def _complete_null_columns(U: np.ndarray, good: np.ndarray) -> np.ndarray:
    if good.all():
        return U
    Ug = U[:, good]
    if Ug.shape[1] == 0:
        comp = np.eye(U.shape[0])
    else:
        Qfull, _ = householder_qr(Ug, complete=True)
        comp = Qfull[:, Ug.shape[1]:]
    U = U.copy()
    U[:, ~good] = comp[:, : int((~good).sum())]
    return U


def dense_svd(M) -> SvdFactors:
    """Thin SVD by one-sided Jacobi (Hestenes), preceded by Householder QR for tall inputs.

    Returns ``min(rows, cols)`` singular triplets, singular values descending.
    """
    A = as_matrix(M)
    m, n = A.shape
    if m < n:
        f = dense_svd(A.T)
        return SvdFactors(f.V, f.sigma, f.U)

    if m > n:
        Q, R = householder_qr(A)
        inner = dense_svd(R)
        return SvdFactors(Q @ inner.U, inner.sigma, inner.V)

    W, V = _one_sided_jacobi(A.copy())
    sigma = np.linalg.norm(W, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, W, V = sigma[order], W[:, order], V[:, order]
    good = sigma > np.finfo(np.float64).tiny * 1e4
    U = np.zeros_like(W)
    U[:, good] = W[:, good] / sigma[good]
    sigma = np.where(good, sigma, 0.0)
    U = _complete_null_columns(U, good)
    return SvdFactors(U, sigma, V)


def truncate_rank(sigma, eps: float) -> int:
    """Number of singular values strictly above ``eps * sigma[0]``, never less than one."""
    s = np.asarray(sigma, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("sigma must be a nonempty 1-D array")
    if eps <= 0:
        raise ValueError("eps must be positive")
    return max(1, int(np.count_nonzero(s > eps * s[0])))
