"""Alternating U-step / W-step iteration for regularized MVA."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import MvaProblem, ProjectionModel, fit_closed_form, objective, prepare
from .linalg import regularized_inverse, sym_eig
from .metrics import sparsity_rate
from .regularizers import Penalty, solve_u_step
from .wstep import WStepStrategy, w_step, w_step_procrustes

__all__ = [
    "InitKind",
    "InitScheme",
    "IterationRecord",
    "DivergenceError",
    "derive_seed",
    "initial_v",
    "fit_iterative",
    "stall_check",
]


class InitKind(str, enum.Enum):
    RANDOM = "random"
    ORTHOGONAL = "orthogonal"
    IDEAL = "ideal"


@dataclass(frozen=True)
class InitScheme:
    """Starting ``V``: i.i.d. uniform [0, 1) entries, eigenvectors of the output
    covariance (``C_XX`` for PCA), or the unregularized closed-form solution."""

    kind: InitKind = InitKind.RANDOM
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", InitKind(self.kind))

    @classmethod
    def random(cls, seed: int) -> "InitScheme":
        return cls(InitKind.RANDOM, int(seed))

    @classmethod
    def orthogonal(cls) -> "InitScheme":
        return cls(InitKind.ORTHOGONAL)

    @classmethod
    def ideal(cls) -> "InitScheme":
        return cls(InitKind.IDEAL)


class IterationRecord(tuple):
    """``(objective, rel_change_u, change_v, sparsity)`` for one outer iteration."""

    __slots__ = ()

    def __new__(cls, objective, rel_change_u, change_v, sparsity):
        return super().__new__(cls, (objective, rel_change_u, change_v, sparsity))

    objective = property(lambda self: self[0])
    rel_change_u = property(lambda self: self[1])
    change_v = property(lambda self: self[2])
    sparsity = property(lambda self: self[3])


class DivergenceError(FloatingPointError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def derive_seed(root_seed: int, run_index: int) -> int:
    """Per-run 64-bit seed from a root seed and a run index (SeedSequence spawn key)."""
    ss = np.random.SeedSequence(int(root_seed), spawn_key=(int(run_index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def initial_v(prob: MvaProblem, k: int, init: InitScheme) -> np.ndarray:
    if init.kind is InitKind.RANDOM:
        return np.random.default_rng(init.seed).random((prob.m, k))
    if init.kind is InitKind.ORTHOGONAL:
        return sym_eig(prob.Cyy).eigenvectors[:, :k].copy()
    return fit_closed_form(prob, prob.variant, k, 0.0).V.copy()


def fit_iterative(d, variant, k: int, penalty: Penalty | None = None, strategy="eigen",
                  init: InitScheme | None = None, max_iter: int = 500,
                  tol: float = 1e-6) -> ProjectionModel:
    """Alternate the regularized U-step and the chosen W-step.

    Starting from ``V0`` the first U-step gives ``U0``; iteration ``t`` then
    computes ``V_t`` from ``U_{t-1}`` and ``U_t`` from ``V_t``. The loop stops
    when ``||U_t - U_{t-1}||_F / (||U_{t-1}||_F + 1e-12) < tol`` or after
    ``max_iter`` iterations. The returned ``U`` is the exact U-step answer
    for the returned ``V``.
    """
    prob = d if isinstance(d, MvaProblem) else prepare(d, variant)
    penalty = penalty if penalty is not None else Penalty("none")
    strategy = WStepStrategy.parse(strategy)
    init = init if init is not None else InitScheme.random(0)
    if not 1 <= k <= prob.max_k:
        raise ValueError(f"k={k} outside [1, {prob.max_k}]")

    gamma = penalty.effective_gamma
    closed = penalty.kind in ("none", "ridge") or gamma == 0.0
    Cinv = regularized_inverse(prob.Cxx, gamma) if closed else None
    B_full = prob.B()  # n x m
    G_map = B_full.T  # G = Omega^{1/2} C_XY^T U

    def u_of(V, U_warm):
        return solve_u_step(prob.Cxx, B_full @ V, penalty, lipschitz=prob.lipschitz,
                            inverse=Cinv, U0=U_warm, support_cache=prob.support_cache)

    V = initial_v(prob, k, init)
    res = u_of(V, None)
    U = res.U
    inner_ok = res.converged
    flags: set = set()
    trace: list = []
    converged = False
    U_back = None  # U_{t-2}, for limit-cycle detection
    it = 0
    for it in range(1, max_iter + 1):
        V_new, _, wflags = w_step(G_map @ U, strategy)
        flags |= wflags
        res = u_of(V_new, U)
        inner_ok &= res.converged
        U_new = res.U
        W = prob.omega_inv_half @ V_new
        loss = objective(prob, prob.variant, U_new, W, gamma, penalty)
        du = float(np.linalg.norm(U_new - U) / (np.linalg.norm(U) + 1e-12))
        dv = float(np.linalg.norm(V_new - V))
        trace.append(IterationRecord(loss, du, dv, sparsity_rate(U_new)))
        if not np.isfinite(loss):
            raise DivergenceError(f"objective became non-finite at iteration {it}", trace)
        if du < tol:
            U, V = U_new, V_new
            converged = True
            break
        if U_back is not None and np.linalg.norm(U_new - U_back) < tol * (
                np.linalg.norm(U_back) + 1e-12):
            # the eigen map with a non-smooth penalty can settle into a 2-cycle
            U, V = U_new, V_new
            flags.add("limit-cycle")
            break
        U_back, U, V = U, U_new, V_new
    if not inner_ok:
        flags.add("inner-not-converged")
    if not np.any(U):
        flags.add("degenerate")
    Lambda = np.diag(U.T @ B_full @ V).copy()
    return ProjectionModel(U, prob.omega_inv_half @ V, V, Lambda, k, gamma, penalty,
                           prob.variant, method=strategy.value, trace=trace,
                           converged=converged, iterations=it, flags=flags)


def stall_check(d, variant, V0, identifiable_only: bool = True) -> float:
    """Distance moved by one unregularized Procrustes iteration from an orthogonal ``V0``.

    Returns ``||V1 - V0||_F`` after aligning column signs. When
    ``identifiable_only`` is set, the difference is first projected onto the
    range of ``M = Omega^{1/2} C_XY^T C_XX^{-1} C_XY Omega^{1/2}``: along the
    null space of ``M`` the Procrustes solution is not unique and such a
    component leaves the next U-step unchanged.
    """
    prob = d if isinstance(d, MvaProblem) else prepare(d, variant)
    V0 = np.asarray(V0, dtype=float)
    if V0.ndim != 2 or V0.shape != (prob.m, prob.m):
        raise ValueError(f"V0 must be square {prob.m}x{prob.m}, got {V0.shape}")
    if np.linalg.norm(V0.T @ V0 - np.eye(prob.m)) > 1e-10:
        raise ValueError("V0 is not orthogonal")
    Cinv = regularized_inverse(prob.Cxx, 0.0)
    B = prob.B()
    U1 = Cinv @ (B @ V0)
    V1 = w_step_procrustes(B.T @ U1)
    if identifiable_only:
        M = B.T @ Cinv @ B
        eig = sym_eig(M)
        top = max(eig.eigenvalues[0], np.finfo(float).tiny)
        E = eig.eigenvectors[:, eig.eigenvalues > 1e-10 * top]
        V0, V1 = E @ (E.T @ V0), E @ (E.T @ V1)
    # column signs are arbitrary; align each column of V1 with V0
    signs = np.where(np.sum(V1 * V0, axis=0) < 0, -1.0, 1.0)
    diff = V1 * signs - V0
    return float(np.linalg.norm(diff))
