"""Dense linear-algebra kernels shared by the solvers.

Every routine here fixes the ordering and sign ambiguities of the underlying
LAPACK call, so that results from different code paths can be compared
column by column.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SingularMatrixError",
    "SymEig",
    "Svd",
    "sign_flips",
    "canonicalize_columns",
    "sym_eig",
    "thin_svd",
    "inv_sqrt_psd",
    "sqrt_psd",
    "regularized_inverse",
    "qr_diagonal_abs",
    "projector_distance",
]

# relative eigenvalue floor below which a PSD matrix is treated as singular
SINGULAR_RTOL = 1e-12


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when an inverse is requested of a numerically singular matrix."""


@dataclass(frozen=True)
class SymEig:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class Svd:
    Q: np.ndarray
    s: np.ndarray
    P: np.ndarray
    rank: int

    def reconstruct(self) -> np.ndarray:
        return (self.Q * self.s) @ self.P.T


def _check_finite(A, name="matrix"):
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def sign_flips(M: np.ndarray) -> np.ndarray:
    """Return +-1 per column so that each column's largest-magnitude entry
    becomes non-negative (first occurrence wins on ties)."""
    M = np.atleast_2d(M)
    if M.size == 0:
        return np.ones(M.shape[1])
    idx = np.argmax(np.abs(M), axis=0)
    signs = np.sign(M[idx, np.arange(M.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def canonicalize_columns(M: np.ndarray) -> np.ndarray:
    return M * sign_flips(M)


def sym_eig(A) -> SymEig:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    The input is symmetrized as ``(A + A.T) / 2`` before decomposition.
    Eigenvector signs follow :func:`sign_flips`.
    """
    A = _check_finite(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    w = w[::-1].copy()
    V = V[:, ::-1]
    return SymEig(w, canonicalize_columns(V))


def thin_svd(A) -> Svd:
    """Thin SVD ``A = Q diag(s) P^T`` with singular values descending.

    Columns of Q follow the sign convention of :func:`sign_flips`; the
    matching columns of P are flipped with them so the product is unchanged.
    """
    A = _check_finite(A)
    Q, s, Pt = np.linalg.svd(A, full_matrices=False)
    flips = sign_flips(Q)
    Q = Q * flips
    P = Pt.T * flips
    rank = int(np.sum(s > SINGULAR_RTOL * s[0])) if s.size and s[0] > 0 else 0
    return Svd(Q, s, P, rank)


def _psd_eig(A):
    A = _check_finite(A)
    eig = sym_eig(A)
    w = eig.eigenvalues
    tr = max(float(np.trace(A)), 0.0)
    if w.size and w[-1] < -1e-9 * max(tr, np.finfo(float).tiny):
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w[-1]:.3e})")
    return np.clip(w, 0.0, None), eig.eigenvectors


def inv_sqrt_psd(A, jitter: float = 0.0) -> np.ndarray:
    """Symmetric inverse square root ``(A + jitter*I)^{-1/2}`` of a PSD matrix."""
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    w, V = _psd_eig(A)
    if jitter == 0 and (w.size == 0 or w[-1] <= SINGULAR_RTOL * w[0]):
        raise SingularMatrixError("singular matrix, supply jitter")
    R = (V / np.sqrt(w + jitter)) @ V.T
    return 0.5 * (R + R.T)


def sqrt_psd(A, jitter: float = 0.0) -> np.ndarray:
    """Symmetric PSD square root ``(A + jitter*I)^{1/2}``."""
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    w, V = _psd_eig(A)
    R = (V * np.sqrt(w + jitter)) @ V.T
    return 0.5 * (R + R.T)


def regularized_inverse(C, gamma: float = 0.0) -> np.ndarray:
    """Return ``(C + gamma*I)^{-1}`` for a PSD matrix ``C``.

    Raises
    ------
    SingularMatrixError
        If ``gamma == 0`` and the smallest eigenvalue of ``C`` is below
        ``1e-12`` times the largest.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    w, V = _psd_eig(C)
    if gamma == 0 and (w.size == 0 or w[-1] <= SINGULAR_RTOL * w[0]):
        raise SingularMatrixError(
            "C_XX is singular; use gamma > 0 or drop collinear features")
    R = (V / (w + gamma)) @ V.T
    return 0.5 * (R + R.T)


def qr_diagonal_abs(A) -> np.ndarray:
    """``|R_jj|`` from an unpivoted Householder QR of ``A``."""
    A = _check_finite(A)
    if A.size == 0:
        return np.zeros(0)
    R = np.linalg.qr(A, mode="r")
    return np.abs(np.diag(R))


def projector_distance(V1, V2) -> float:
    """Frobenius distance between the orthogonal projectors onto two column spaces."""
    V1 = np.asarray(V1, dtype=float)
    V2 = np.asarray(V2, dtype=float)
    return float(np.linalg.norm(V1 @ V1.T - V2 @ V2.T))
