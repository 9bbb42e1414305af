"""W-step solvers.

Both strategies take ``G = Omega^{1/2} C_XY^T U`` (m x k) and return an
orthonormal ``V``:

* Procrustes: ``V = Q P^T`` from the thin SVD ``G = Q Sigma P^T``; the exact
  maximiser of ``Tr{V^T G}`` under ``V^T V = I``.
* Eigen: ``V`` = top-k eigenvectors of ``G G^T``, i.e. ``V = Q``. This keeps
  ``U^T C_XY Omega^{1/2} V = P Sigma`` diagonal at the fixed point, which is
  what makes the extracted features uncorrelated.
"""
from __future__ import annotations

import enum

import numpy as np

from .core import MvaProblem, prepare
from .linalg import regularized_inverse, sym_eig, thin_svd

__all__ = [
    "WStepStrategy",
    "WStepMismatchError",
    "w_step_procrustes",
    "w_step_eigen",
    "w_step",
    "is_rank_deficient",
    "has_repeated",
    "rotation_between",
    "procrustes_feature_correlation",
]


class WStepStrategy(str, enum.Enum):
    PROCRUSTES = "procrustes"
    EIGEN = "eigen"

    @classmethod
    def parse(cls, value) -> "WStepStrategy":
        return value if isinstance(value, cls) else cls(str(value).lower())


class WStepMismatchError(ArithmeticError):
    """A relation that should hold between W-step quantities does not."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def _as_matrix(G):
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if not np.all(np.isfinite(G)):
        raise ValueError("G has non-finite entries")
    return G


def w_step_procrustes(G) -> np.ndarray:
    """Polar factor ``Q P^T`` of ``G``; non-unique (but still returned) when rank < k."""
    svd = thin_svd(_as_matrix(G))
    return svd.Q @ svd.P.T


def w_step_eigen(G):
    """Top-k eigenpairs of ``G G^T``; returns ``(V, Lambda)``."""
    G = _as_matrix(G)
    k = G.shape[1]
    eig = sym_eig(G @ G.T)
    lam = np.clip(eig.eigenvalues[:k], 0.0, None)
    return eig.eigenvectors[:, :k], lam


def is_rank_deficient(G) -> bool:
    G = _as_matrix(G)
    return thin_svd(G).rank < G.shape[1]


def has_repeated(lam, rtol: float = 1e-10) -> bool:
    lam = np.asarray(lam, dtype=float)
    if lam.size < 2:
        return False
    scale = max(float(np.max(np.abs(lam))), np.finfo(float).tiny)
    return bool(np.any(np.abs(np.diff(lam)) <= rtol * scale))


def w_step(G, strategy):
    """Dispatch on strategy; returns ``(V, Lambda, flags)``."""
    G = _as_matrix(G)
    strategy = WStepStrategy.parse(strategy)
    flags = set()
    if strategy is WStepStrategy.PROCRUSTES:
        svd = thin_svd(G)
        if svd.rank < G.shape[1]:
            flags.add("rank-deficient")
        return svd.Q @ svd.P.T, svd.s ** 2, flags
    V, lam = w_step_eigen(G)
    if has_repeated(lam):
        flags.add("repeated-eigenvalues")
    return V, lam, flags


def rotation_between(V_p, V_eig, G, atol: float = 1e-8) -> np.ndarray:
    """Orthogonal ``R`` (k x k) with ``V_p = V_eig @ R``.

    ``R`` is ``P^T`` from the SVD of ``G``, with rows sign-aligned to the
    columns of ``V_eig``. Raises :class:`WStepMismatchError` when the
    relation fails by more than ``atol`` in Frobenius norm.
    """
    G = _as_matrix(G)
    V_p = np.asarray(V_p, dtype=float)
    V_eig = np.asarray(V_eig, dtype=float)
    svd = thin_svd(G)
    # align the signs of Q to V_eig before reading off P^T
    d = np.sign(np.sum(V_eig * svd.Q, axis=0))
    d[d == 0] = 1.0
    R = d[:, None] * svd.P.T
    residual = float(np.linalg.norm(V_p - V_eig @ R))
    if residual > atol:
        raise WStepMismatchError("Procrustes and eigen solutions are not related by P^T", residual)
    return R


def procrustes_feature_correlation(d, variant, V_p, *, check: bool = True, rtol: float = 1e-6):
    """Feature Gram matrix ``U_p^T C_XX U_p`` after an exact, unregularized U-step from ``V_p``.

    With ``check`` the result is compared with ``P Sigma P^T`` from the SVD
    of ``Omega^{1/2} C_XY^T U_p``. The two agree whenever the column space
    of ``V_p`` is invariant under ``M`` (in particular for square
    orthogonal ``V_p`` and for converged Procrustes iterates).
    """
    prob = d if isinstance(d, MvaProblem) else prepare(d, variant)
    V_p = np.atleast_2d(np.asarray(V_p, dtype=float))
    Cinv = regularized_inverse(prob.Cxx, 0.0)
    U_p = Cinv @ prob.B() @ V_p
    A = U_p.T @ prob.Cxx @ U_p
    A = 0.5 * (A + A.T)
    if check:
        svd = thin_svd(prob.omega_half @ prob.Cxy.T @ U_p)
        expected = (svd.P * svd.s) @ svd.P.T
        residual = float(np.linalg.norm(A - expected))
        if residual > rtol * max(1.0, float(np.linalg.norm(svd.s))):
            raise WStepMismatchError("U_p^T C_XX U_p differs from P Sigma P^T", residual)
    return A
