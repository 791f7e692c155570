"""Numerical checks of the unit-ball relaxation of spectral regularization.

For any ``Z = sum_k d_k a_k b_k^T`` with ``d_k >= 0`` and ``||a_k||, ||b_k|| <= 1``
the nuclear norm obeys ``||Z||_* <= sum_k d_k``, with equality when the
decomposition is already an SVD.  Replacing a relaxed decomposition by the SVD
of the matrix it represents therefore never increases the relaxed objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .data import ObservedMatrix
from .special import as_generator

__all__ = [
    "RelaxedDecomposition",
    "jacobi_svd",
    "singular_values",
    "check_nuclear_bound",
    "nearest_svd_improvement",
    "random_decomposition",
    "relaxed_objective",
    "TrialSummary",
    "run_trials",
]

BOUND_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RelaxedDecomposition:
    """``d`` (r,), ``alphas`` (r, m), ``betas`` (r, n) with rows in the unit ball."""

    d: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.float64).reshape(-1)
        al = np.atleast_2d(np.asarray(self.alphas, dtype=np.float64))
        be = np.atleast_2d(np.asarray(self.betas, dtype=np.float64))
        if al.shape[0] != len(d) or be.shape[0] != len(d):
            raise ValueError("d, alphas and betas disagree on r")
        if np.any(d < 0):
            raise ValueError("d must be nonnegative")
        if np.any(np.sum(al ** 2, axis=1) > 1 + 1e-12) or np.any(np.sum(be ** 2, axis=1) > 1 + 1e-12):
            raise ValueError("factor vectors must lie in the unit ball")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "alphas", al)
        object.__setattr__(self, "betas", be)

    def matrix(self) -> np.ndarray:
        return (self.alphas.T * self.d) @ self.betas


@numba.njit(cache=True)
def _one_sided_jacobi(A, V, tol, max_sweeps):
    # Hestenes rotations on the columns of A until all pairs are orthogonal.
    m, n = A.shape
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    alpha += A[i, p] * A[i, p]
                    beta += A[i, q] * A[i, q]
                    gamma += A[i, p] * A[i, q]
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    ap = A[i, p]
                    aq = A[i, q]
                    A[i, p] = c * ap - s * aq
                    A[i, q] = s * ap + c * aq
                for i in range(n):
                    vp = V[i, p]
                    vq = V[i, q]
                    V[i, p] = c * vp - s * vq
                    V[i, q] = s * vp + c * vq
        if not rotated:
            return sweep + 1
    return max_sweeps


def jacobi_svd(Z, tol: float = 1e-15, max_sweeps: int = 60):
    """Thin SVD ``Z = U diag(s) V^T`` by one-sided Jacobi rotations.

    Returns ``(U, s, V)`` with ``s`` descending; columns of ``U`` belonging to
    numerically zero singular values are zero.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if not np.all(np.isfinite(Z)):
        raise ValueError("matrix has non-finite entries")
    transposed = Z.shape[0] < Z.shape[1]
    A = np.array(Z.T if transposed else Z, dtype=np.float64, order="C")
    k = A.shape[1]
    V = np.eye(k)
    _one_sided_jacobi(A, V, tol, max_sweeps)
    s = np.linalg.norm(A, axis=0)
    order = np.argsort(-s, kind="stable")
    s = s[order]
    A = A[:, order]
    V = V[:, order]
    cutoff = (s[0] if len(s) else 0.0) * max(A.shape) * np.finfo(float).eps
    U = np.zeros_like(A)
    live = s > cutoff
    U[:, live] = A[:, live] / s[live]
    s = np.where(live, s, 0.0)
    if transposed:
        return V, s, U
    return U, s, V


def singular_values(Z) -> np.ndarray:
    """Singular values of ``Z`` in descending order."""
    return jacobi_svd(Z)[1]


def check_nuclear_bound(dec: RelaxedDecomposition, tol: float = BOUND_TOL) -> tuple[float, float, bool]:
    """``(||Z||_*, sum d, ||Z||_* <= sum d + tol)`` for ``Z = sum_k d_k a_k b_k^T``."""
    lhs = float(np.sum(singular_values(dec.matrix())))
    rhs = float(np.sum(dec.d))
    return lhs, rhs, lhs <= rhs + tol


def nearest_svd_improvement(dec: RelaxedDecomposition) -> RelaxedDecomposition:
    """The SVD of ``sum_k d_k a_k b_k^T`` as a relaxed decomposition of the same rank budget."""
    r = len(dec.d)
    U, s, V = jacobi_svd(dec.matrix())
    k = min(r, len(s))
    d = np.zeros(r)
    alphas = np.zeros((r, dec.alphas.shape[1]))
    betas = np.zeros((r, dec.betas.shape[1]))
    d[:k] = s[:k]
    alphas[:k] = U[:, :k].T
    betas[:k] = V[:, :k].T
    return RelaxedDecomposition(d, alphas, betas)


def _ball_uniform(gen, r, dim):
    x = gen.standard_normal((r, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * gen.random((r, 1)) ** (1.0 / dim)


def random_decomposition(r: int, m: int, n: int, rng, scale: float = 1.0) -> RelaxedDecomposition:
    """``d ~ Exp(scale)`` with factor vectors uniform in the unit balls."""
    gen = as_generator(rng)
    d = gen.exponential(scale, size=r)
    return RelaxedDecomposition(d, _ball_uniform(gen, r, m), _ball_uniform(gen, r, n))


def relaxed_objective(dec: RelaxedDecomposition, data: ObservedMatrix, sigma2: float,
                      weight: float = 1.0) -> float:
    """``||P_Omega(X - Z)||_F^2 / (2 sigma2) + weight * sum_k d_k``."""
    Z = dec.matrix()
    res = data.vals - Z[data.rows, data.cols]
    return float(res @ res) / (2.0 * sigma2) + weight * float(np.sum(dec.d))


@dataclass(frozen=True)
class TrialSummary:
    trials: int
    bound_holds: int
    strict: int
    equality_cases: int
    equality_holds: int
    max_violation: float
    max_equality_gap: float

    @property
    def passed(self) -> bool:
        return self.bound_holds == self.trials and self.equality_holds == self.equality_cases


def run_trials(trials: int = 1000, m: int = 20, n: int = 20, r: int = 5, seed: int = 0,
               strict_margin: float = 1e-9) -> TrialSummary:
    """Random relaxed decompositions against the nuclear-norm bound, plus SVD-form equality cases."""
    gen = as_generator(seed)
    holds = strict = 0
    worst = -math.inf
    for _ in range(trials):
        lhs, rhs, ok = check_nuclear_bound(random_decomposition(r, m, n, gen))
        holds += ok
        strict += lhs < rhs - strict_margin
        worst = max(worst, lhs - rhs)
    eq_cases = max(1, trials // 10)
    eq_holds = 0
    gap = 0.0
    for _ in range(eq_cases):
        svd_form = nearest_svd_improvement(random_decomposition(r, m, n, gen))
        lhs, rhs, _ = check_nuclear_bound(svd_form)
        gap = max(gap, abs(lhs - rhs))
        eq_holds += abs(lhs - rhs) <= 1e-10 * max(1.0, rhs)
    return TrialSummary(trials, holds, strict, eq_cases, eq_holds, worst, gap)
