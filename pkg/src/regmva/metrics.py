"""Feature-quality diagnostics: explained variance, feature correlation, sparsity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import qr_diagonal_abs

__all__ = ["MetricRow", "feature_gram", "tev", "cef", "sparsity_rate"]

ZERO_TOL = 1e-12


def feature_gram(U, Cxx) -> np.ndarray:
    U = np.atleast_2d(np.asarray(U, dtype=float))
    A = U.T @ np.asarray(Cxx, dtype=float) @ U
    return 0.5 * (A + A.T)


def tev(U, Cxx, k: int | None = None) -> np.ndarray:
    """Cumulative total explained variance ``TEV(1..k)``.

    A single unpivoted QR of the ``k``-feature Gram matrix ``U^T C_XX U`` is
    taken; ``TEV(j)`` is the sum of ``|R_ii|`` for ``i <= j``. No pivoting,
    so the model's feature order is respected.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if k is None:
        k = U.shape[1]
    if k > U.shape[1]:
        raise ValueError(f"U has {U.shape[1]} columns, asked for TEV up to {k}")
    return np.cumsum(qr_diagonal_abs(feature_gram(U[:, :k], Cxx)))


def cef(U, Cxx) -> float:
    """Correlation of extracted features: ``||A - diag(A)||_F`` for ``A = U^T C_XX U``."""
    A = feature_gram(U, Cxx)
    off = A - np.diag(np.diag(A))
    return float(np.linalg.norm(off))


def sparsity_rate(U) -> float:
    """Fraction of entries with magnitude at most 1e-12."""
    U = np.asarray(U, dtype=float)
    if U.size == 0:
        return 0.0
    return float(np.mean(np.abs(U) <= ZERO_TOL))


@dataclass
class MetricRow:
    method: str
    variant: str
    k: int
    seed: int
    gamma: float
    sr: float
    loss: float
    tev: float  # TEV(k), the final cumulative value
    cef: float
    iterations: int
    converged: str  # "true" / "false" / "error"
    tev_curve: tuple = ()
    target_sr: float | None = None  # SR grid point, for CEF-vs-SR rows
    error: str = ""

    def key(self):
        return (self.method, self.variant, self.k, self.gamma, self.seed)
