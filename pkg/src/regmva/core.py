"""Closed-form MVA solutions (PCA, CCA, OPLS) and the shared objective.

All three methods minimise

    ||Omega^{1/2} (Y - W U^T X)||_F^2 + gamma * R(U)

and differ only in the output weighting ``Omega`` (identity for OPLS and PCA,
the inverse output covariance for CCA) and in PCA reusing ``X`` as ``Y``.
With ``W = Omega^{-1/2} V`` the unregularized problem reduces to a symmetric
``m x m`` eigenproblem for ``V``.
"""
from __future__ import annotations

import enum
import warnings
import weakref
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, covariances
from .linalg import inv_sqrt_psd, regularized_inverse, sqrt_psd, sym_eig
from .metrics import cef
from .regularizers import Penalty, penalty_value

__all__ = [
    "Variant",
    "MvaVariant",
    "MvaProblem",
    "ProjectionModel",
    "prepare",
    "fit_closed_form",
    "objective",
    "trace_objective",
    "uncorrelation_residual",
]


class Variant(str, enum.Enum):
    PCA = "pca"
    CCA = "cca"
    OPLS = "opls"


@dataclass(frozen=True)
class MvaVariant:
    """Method selector.

    ``omega_jitter`` only matters for CCA, where ``Omega = (C_YY + eps I)^{-1}``;
    ``None`` picks ``eps = 1e-8 * trace(C_YY) / m``. A centered one-hot
    ``Y`` always has a singular ``C_YY``, so CCA needs some jitter.
    """

    tag: Variant
    omega_jitter: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "tag", Variant(self.tag))

    @classmethod
    def parse(cls, value) -> "MvaVariant":
        if isinstance(value, MvaVariant):
            return value
        return cls(Variant(str(value).lower()))

    @property
    def name(self) -> str:
        return self.tag.value


@dataclass(frozen=True, eq=False)
class MvaProblem:
    """Moments of one (dataset, variant) pair, computed once and shared."""

    variant: MvaVariant
    X: np.ndarray
    Y: np.ndarray  # output actually used (X itself for PCA)
    Cxx: np.ndarray
    Cyy: np.ndarray
    Cxy: np.ndarray
    omega: np.ndarray
    omega_half: np.ndarray
    omega_inv_half: np.ndarray
    output_energy: float  # Tr{Y^T Omega Y}
    lipschitz: float  # largest eigenvalue of C_XX
    support_cache: dict = field(default_factory=dict, repr=False)  # C_AA^{-1} per l1 support

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.Y.shape[0]

    @property
    def max_k(self) -> int:
        return min(self.n, self.m)

    def B(self) -> np.ndarray:
        """``C_XY Omega^{1/2}``, the n x m matrix mapping V to the U-step right-hand side."""
        return self.Cxy @ self.omega_half

    def M(self, gamma: float = 0.0) -> np.ndarray:
        """``Omega^{1/2} C_XY^T (C_XX + gamma I)^{-1} C_XY Omega^{1/2}``."""
        B = self.B()
        Mm = B.T @ regularized_inverse(self.Cxx, gamma) @ B
        return 0.5 * (Mm + Mm.T)


_problem_cache: "weakref.WeakKeyDictionary[Dataset, dict]" = weakref.WeakKeyDictionary()


def prepare(d: Dataset, variant) -> MvaProblem:
    """Covariances and Omega factors for ``variant`` on ``d`` (cached per dataset)."""
    variant = MvaVariant.parse(variant)
    per_ds = _problem_cache.setdefault(d, {})
    if variant in per_ds:
        return per_ds[variant]
    Cxx, Cyy, Cxy = covariances(d)
    Y = d.Y
    if variant.tag is Variant.PCA:
        Y, Cyy, Cxy = d.X, Cxx, Cxx
    m = Y.shape[0]
    eye = np.eye(m)
    if variant.tag is Variant.CCA:
        eps = variant.omega_jitter
        if eps is None:
            eps = 1e-8 * float(np.trace(Cyy)) / m
        omega_half = inv_sqrt_psd(Cyy, eps)
        omega_inv_half = sqrt_psd(Cyy, eps)
        omega = omega_half @ omega_half
        omega = 0.5 * (omega + omega.T)
    else:
        omega = omega_half = omega_inv_half = eye
    energy = float(np.sum(omega * Cyy))
    lip = float(sym_eig(Cxx).eigenvalues[0])
    prob = MvaProblem(variant, d.X, Y, Cxx, Cyy, Cxy, omega, omega_half, omega_inv_half,
                      energy, lip)
    per_ds[variant] = prob
    return prob


@dataclass
class ProjectionModel:
    U: np.ndarray
    W: np.ndarray
    V: np.ndarray
    Lambda: np.ndarray
    k: int
    gamma: float
    penalty: Penalty
    variant: MvaVariant
    method: str = "closed-form"
    trace: list = field(default_factory=list)
    converged: bool = True
    iterations: int = 0
    flags: set = field(default_factory=set)

    def transform(self, X) -> np.ndarray:
        """Extracted features ``U^T X`` for column-sample data."""
        return self.U.T @ np.asarray(X, dtype=float)


def fit_closed_form(d: Dataset, variant, k: int, gamma: float = 0.0) -> ProjectionModel:
    """Non-iterative solution with a ridge term ``gamma * ||U||_F^2``.

    ``V`` holds the top-``k`` eigenvectors of
    ``Omega^{1/2} C_XY^T (C_XX + gamma I)^{-1} C_XY Omega^{1/2}``, and
    ``U = (C_XX + gamma I)^{-1} C_XY Omega^{1/2} V``.
    """
    prob = d if isinstance(d, MvaProblem) else prepare(d, variant)
    if not 1 <= k <= prob.max_k:
        raise ValueError(f"k={k} outside [1, {prob.max_k}]")
    Cinv = regularized_inverse(prob.Cxx, gamma)
    B = prob.B()
    # PCA at gamma = 0: M is C_XX itself and U = V; skip the ill-conditioned round trip
    exact_pca = prob.variant.tag is Variant.PCA and gamma == 0.0
    M = prob.Cxx if exact_pca else B.T @ Cinv @ B
    eig = sym_eig(M)
    lam = np.clip(eig.eigenvalues[:k], 0.0, None)
    V = eig.eigenvectors[:, :k]
    flags = set()
    top = eig.eigenvalues[0]
    rank = int(np.sum(eig.eigenvalues > 1e-12 * top)) if top > 0 else 0
    if k > rank:
        warnings.warn(f"k={k} exceeds the rank ({rank}) of the eigenproblem; "
                      "trailing eigenvalues are zero", RuntimeWarning, stacklevel=2)
        flags.add("rank-deficient")
    U = V.copy() if exact_pca else Cinv @ B @ V
    W = prob.omega_inv_half @ V
    penalty = Penalty("ridge", gamma) if gamma > 0 else Penalty("none")
    return ProjectionModel(U, W, V, lam, k, gamma, penalty, prob.variant, flags=flags)


def objective(d, variant, U, W, gamma: float = 0.0, penalty: Penalty | None = None) -> float:
    """Value of the regularized MVA loss for a given ``(U, W)`` pair.

    Evaluated in trace form:
    ``Tr{Y^T Omega Y} - 2 Tr{U^T C_XY Omega W} + Tr{U^T C_XX U W^T Omega W} + gamma R(U)``.
    """
    prob = d if isinstance(d, MvaProblem) else prepare(d, variant)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if U.shape[0] != prob.n or W.shape[0] != prob.m or U.shape[1] != W.shape[1]:
        raise ValueError(
            f"shape mismatch: U {U.shape}, W {W.shape} for n={prob.n}, m={prob.m}")
    OW = prob.omega @ W
    cross = np.sum((prob.Cxy.T @ U) * OW)
    quad = np.sum((U.T @ prob.Cxx @ U) * (W.T @ OW))
    value = prob.output_energy - 2.0 * cross + quad
    if penalty is not None and gamma > 0:
        value += gamma * penalty_value(penalty, U)
    return float(value)


def trace_objective(d, variant, V, gamma: float = 0.0) -> float:
    """``Tr{V^T M V}``: the maximisation form of the loss, reported for CCA."""
    prob = d if isinstance(d, MvaProblem) else prepare(d, variant)
    V = np.asarray(V, dtype=float)
    return float(np.sum(V * (prob.M(gamma) @ V)))


def uncorrelation_residual(U, Cxx) -> float:
    """Frobenius norm of the off-diagonal part of ``U^T C_XX U``."""
    return cef(U, Cxx)
