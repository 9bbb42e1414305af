"""U-step: multi-output regularized least squares.

Solves ``min_U ||Y' - U^T X||_F^2 + gamma * R(U)`` for
``R in {none, ridge, l1, l21}``. Everything is expressed through the Gram
quantities ``C = X X^T`` and ``B = X Y'^T``, so the per-iteration cost does not
depend on the number of samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .linalg import regularized_inverse, sym_eig
from .metrics import ZERO_TOL, sparsity_rate

__all__ = [
    "PENALTY_KINDS",
    "Penalty",
    "UStepResult",
    "penalty_value",
    "soft_threshold",
    "sparsity_rate",
    "u_step",
    "solve_u_step",
    "u_step_objective",
    "stationarity_residual",
    "gamma_for_sparsity",
    "SparsityFit",
]

PENALTY_KINDS = ("none", "ridge", "l1", "l21")
L21_DELTA = 1e-10


@dataclass(frozen=True)
class Penalty:
    kind: str = "none"
    gamma: float = 0.0
    max_iter: int = 1000
    tol: float = 1e-8

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"unknown penalty {self.kind!r}; expected one of {PENALTY_KINDS}")
        if self.gamma < 0 or not math.isfinite(self.gamma):
            raise ValueError("gamma must be a finite non-negative number")

    @property
    def effective_gamma(self) -> float:
        return 0.0 if self.kind == "none" else self.gamma

    def with_gamma(self, gamma: float) -> "Penalty":
        return replace(self, gamma=float(gamma))


@dataclass
class UStepResult:
    U: np.ndarray
    converged: bool
    iterations: int


def penalty_value(penalty: Penalty, U) -> float:
    """``R(U)`` without the ``gamma`` factor."""
    U = np.asarray(U, dtype=float)
    if penalty.kind == "ridge":
        return float(np.sum(U * U))
    if penalty.kind == "l1":
        return float(np.sum(np.abs(U)))
    if penalty.kind == "l21":
        return float(np.sum(np.linalg.norm(U, axis=1)))
    return 0.0


def soft_threshold(z, tau):
    """``sign(z) * max(|z| - tau, 0)``, elementwise."""
    z = np.asarray(z, dtype=float)
    out = np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)
    return float(out) if out.ndim == 0 else out


def u_step_objective(C, B, U, penalty: Penalty, const: float = 0.0) -> float:
    """``const - 2 Tr{U^T B} + Tr{U^T C U} + gamma R(U)``; ``const = ||Y'||_F^2``
    gives the exact least-squares objective."""
    U = np.asarray(U, dtype=float)
    quad = np.sum(U * (C @ U)) - 2.0 * np.sum(U * B)
    return float(const + quad + penalty.effective_gamma * penalty_value(penalty, U))


def stationarity_residual(C, B, U, penalty: Penalty) -> float:
    """Max-norm distance of ``0`` from the subdifferential of the objective at ``U``."""
    U = np.asarray(U, dtype=float)
    g = 2.0 * (C @ U - B)
    gam = penalty.effective_gamma
    if penalty.kind in ("none", "ridge"):
        r = g + (2.0 * gam * U if penalty.kind == "ridge" else 0.0)
        return float(np.max(np.abs(r), initial=0.0))
    if penalty.kind == "l1":
        nz = np.abs(U) > ZERO_TOL
        r = np.where(nz, g + gam * np.sign(U), np.maximum(np.abs(g) - gam, 0.0))
        return float(np.max(np.abs(r), initial=0.0))
    norms = np.linalg.norm(U, axis=1)
    nz = norms > ZERO_TOL
    r = np.zeros(U.shape[0])
    if np.any(nz):
        r[nz] = np.linalg.norm(g[nz] + gam * U[nz] / norms[nz, None], axis=1)
    r[~nz] = np.maximum(np.linalg.norm(g[~nz], axis=1) - gam, 0.0)
    return float(np.max(r, initial=0.0))


# ---------------------------------------------------------------- l1 ---------

def _support_inverse(C, active, cache):
    key = active.tobytes()
    inv = None if cache is None else cache.get(key)
    if inv is None:
        inv = np.linalg.inv(C[active][:, active])
        if cache is not None:
            cache[key] = inv
    return inv


def _l1_polish(C, b, u, gamma, cache=None, pivots: int = 4):
    """Exact lasso solution near the sign pattern of ``u``, or None if KKT fails.

    Solves the equality system for the current support and signs, then makes
    up to ``pivots`` corrections (drop sign-flipped entries, add the worst
    KKT violator) before giving up. ``cache`` maps supports to ``C_AA^{-1}``.
    """
    half = 0.5 * gamma
    slack = 1e-9 * (half + np.max(np.abs(b), initial=0.0))
    s = np.sign(u)
    s[np.abs(u) <= ZERO_TOL] = 0.0
    for _ in range(pivots + 1):
        active = s != 0
        x = np.zeros_like(b)
        if active.any():
            try:
                inv = _support_inverse(C, active, cache)
            except np.linalg.LinAlgError:
                return None
            xa = inv @ (b[active] - half * s[active])
            flipped = np.sign(xa) != s[active]
            if flipped.any():
                s[np.flatnonzero(active)[flipped]] = 0.0
                continue
            x[active] = xa
        g = C @ x - b
        viol = np.abs(g) - half
        viol[active] = 0.0
        j = int(np.argmax(viol))
        if viol[j] <= slack:
            return x
        s[j] = -np.sign(g[j])
    return None


def _l1_columns(C, B, gamma, L, U0, max_iter, tol, cache=None):
    """Monotone FISTA over all columns at once, with active-set polishing.

    Minimises ``0.5 u^T C u - b^T u + (gamma / 2) |u|_1`` column-wise, i.e. half
    the U-step objective, whose gradient has Lipschitz constant ``L = lambda_max(C)``.
    """
    n, k = B.shape
    half = 0.5 * gamma
    if L <= 0:
        return np.zeros_like(B), True, 0

    def F(U):
        return 0.5 * np.sum(U * (C @ U), axis=0) - np.sum(U * B, axis=0) + half * np.sum(
            np.abs(U), axis=0)

    X = np.zeros_like(B) if U0 is None else np.array(U0, dtype=float)
    done = np.zeros(k, dtype=bool)

    def try_polish(X, done):
        for j in np.flatnonzero(~done):
            x = _l1_polish(C, B[:, j], X[:, j], gamma, cache)
            if x is not None:
                X[:, j] = x
                done[j] = True

    # full-shrinkage columns need no iterations
    zero_cols = np.max(np.abs(B), axis=0) <= half
    X[:, zero_cols] = 0.0
    done |= zero_cols
    try_polish(X, done)
    if np.all(done):
        return X, True, 0

    Fx = F(X)
    F_window = Fx.copy()
    Yk = X.copy()
    t = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        Z = soft_threshold(Yk - (C @ Yk - B) / L, half / L)
        Fz = F(Z)
        take = (Fz <= Fx) & ~done
        Xnew = np.where(take, Z, X)
        Fnew = np.where(take, Fz, Fx)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        Yk = Xnew + (t / t_next) * (Z - Xnew) + ((t - 1.0) / t_next) * (Xnew - X)
        X, Fx, t = Xnew, Fnew, t_next
        if it % 10 == 0:
            try_polish(X, done)
            Yk[:, done] = X[:, done]
            if np.all(done):
                return X, True, it
            # relative decrease over the last 10 iterations
            change = (F_window - Fx) / np.maximum(np.abs(Fx), 1e-300)
            if np.all(change[~done] <= tol):
                return X, True, it
            F_window = Fx.copy()
    try_polish(X, done)
    return X, bool(np.all(done)), it


# ---------------------------------------------------------------- l21 --------

def _l21_rows(C, B, gamma, U0, max_iter, tol):
    """Iteratively reweighted ridge ``U <- (C + gamma D)^{-1} B``,
    ``D = diag(1 / (2 ||u_i|| + delta))``.

    After each sweep a row is set to zero when zero is its exact minimiser
    with the other rows fixed (a guaranteed descent step); rows whose zero
    condition fails at the end are revived and the sweeps resumed.
    """
    pen = Penalty("l21", gamma)
    ridge = regularized_inverse(C, gamma) @ B if gamma > 0 else np.linalg.lstsq(C, B, rcond=None)[0]
    U = ridge if U0 is None else np.array(U0, dtype=float)
    it = 0
    converged = False
    for _ in range(3):
        # zero rows whose optimality condition fails start from the ridge answer
        g = 2.0 * (C @ U - B)
        revive = (np.linalg.norm(U, axis=1) <= ZERO_TOL) & (
            np.linalg.norm(g, axis=1) > gamma * (1.0 + 1e-9))
        if it and not np.any(revive):
            break
        U[revive] = ridge[revive]
        active = np.linalg.norm(U, axis=1) > ZERO_TOL
        U[~active] = 0.0
        obj = u_step_objective(C, B, U, pen)
        converged = False
        while it < max_iter:
            it += 1
            idx = np.flatnonzero(active)
            Unew = np.zeros_like(U)
            if idx.size:
                norms = np.linalg.norm(U[idx], axis=1)
                Caa = C[np.ix_(idx, idx)] + np.diag(gamma / (2.0 * norms + L21_DELTA))
                Unew[idx] = np.linalg.solve(Caa, B[idx])
            for i in np.flatnonzero(active):
                gi = 2.0 * (C[i] @ Unew - C[i, i] * Unew[i] - B[i])
                if np.linalg.norm(gi) <= gamma:
                    Unew[i] = 0.0
                    active[i] = False
            new_obj = u_step_objective(C, B, Unew, pen)
            du = np.linalg.norm(Unew - U) / (np.linalg.norm(U) + 1e-12)
            dobj = abs(obj - new_obj) / max(abs(new_obj), 1e-300)
            U, obj = Unew, new_obj
            if dobj <= tol and du <= tol:
                converged = True
                break
        if not converged:
            break
    U[np.linalg.norm(U, axis=1) <= 1e-10] = 0.0
    return U, converged, it


# ---------------------------------------------------------------- entry ------

def solve_u_step(C, B, penalty: Penalty, *, lipschitz: float | None = None,
                 inverse: np.ndarray | None = None, U0=None,
                 support_cache: dict | None = None) -> UStepResult:
    """U-step from Gram quantities ``C = X X^T`` and ``B = X Y'^T``.

    ``inverse`` may carry a precomputed ``(C + gamma I)^{-1}`` for the
    closed-form kinds; ``U0`` warm-starts the iterative kinds;
    ``support_cache`` (a dict owned by the caller, tied to ``C``) keeps
    ``C_AA^{-1}`` per l1 support between calls.
    """
    C = np.asarray(C, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    gam = penalty.effective_gamma
    if penalty.kind in ("none", "ridge") or gam == 0.0:
        Cinv = inverse if inverse is not None else regularized_inverse(C, gam)
        return UStepResult(Cinv @ B, True, 0)
    if penalty.kind == "l1":
        L = lipschitz if lipschitz is not None else float(sym_eig(C).eigenvalues[0])
        U, ok, it = _l1_columns(C, B, gam, L, U0, penalty.max_iter, penalty.tol, support_cache)
        U[np.abs(U) <= ZERO_TOL] = 0.0
        return UStepResult(U, ok, it)
    U, ok, it = _l21_rows(C, B, gam, U0, penalty.max_iter, penalty.tol)
    return UStepResult(U, ok, it)


def u_step(d, Yprime, penalty: Penalty, U0=None, return_info: bool = False):
    """Solve the U-step for a dataset ``d`` and transformed outputs ``Y'`` (k x N)."""
    X = d.X
    Yprime = np.atleast_2d(np.asarray(Yprime, dtype=float))
    if Yprime.shape[1] != X.shape[1]:
        raise ValueError(f"Y' has {Yprime.shape[1]} samples, X has {X.shape[1]}")
    res = solve_u_step(X @ X.T, X @ Yprime.T, penalty, U0=U0)
    return res if return_info else res.U


# ------------------------------------------------------- sparsity targeting --

@dataclass
class SparsityFit:
    gamma: float
    sr: float
    flagged: bool
    evaluations: int
    model: object = None


def gamma_for_sparsity(d, variant, k: int, kind: str, target: float, tolerance: float = 0.01,
                       *, strategy="eigen", init=None, bracket=(1e-6, 1e6), max_iter: int = 500,
                       tol: float = 1e-6, max_bisections: int = 60) -> SparsityFit:
    """Find ``gamma`` whose fitted model has sparsity rate within ``tolerance`` of ``target``.

    Bisects over ``log gamma`` inside ``bracket``; each probe is a full
    iterative fit with the given strategy and initialization. If the target
    is not reachable inside the bracket, or bisection collapses without
    hitting the band, the closest probe is returned with ``flagged=True``.
    """
    from .iterate import InitScheme, fit_iterative

    if kind not in ("l1", "l21"):
        raise ValueError("sparsity targeting needs a sparsity-inducing penalty (l1 or l21)")
    init = init if init is not None else InitScheme.random(0)
    cache: dict[float, tuple[float, object]] = {}

    def probe(g):
        if g not in cache:
            model = fit_iterative(d, variant, k, Penalty(kind, g), strategy, init,
                                  max_iter=max_iter, tol=tol)
            cache[g] = (sparsity_rate(model.U), model)
        return cache[g]

    def best():
        g = min(cache, key=lambda x: (abs(cache[x][0] - target), x))
        return g, cache[g]

    def result(g, flagged):
        sr, model = cache[g]
        return SparsityFit(g, sr, flagged, len(cache), model)

    lo, hi = bracket
    for attempt in range(2):
        sr_lo, _ = probe(lo)
        if sr_lo >= target - tolerance:
            return result(lo, sr_lo > target + tolerance)
        sr_hi, _ = probe(hi)
        if sr_hi <= target + tolerance:
            return result(hi, sr_hi < target - tolerance)
        if sr_lo <= sr_hi:
            break
        # SR decreased across the bracket: widen once and retry
        lo, hi = lo * 1e-3, hi * 1e3
    else:
        g, _ = best()
        return result(g, True)

    a, b = math.log(lo), math.log(hi)
    for _ in range(max_bisections):
        mid = math.exp(0.5 * (a + b))
        sr, _ = probe(mid)
        if abs(sr - target) <= tolerance:
            return result(mid, False)
        if sr < target:
            a = math.log(mid)
        else:
            b = math.log(mid)
        if b - a < 1e-9:
            break
    g, _ = best()
    return result(g, True)
