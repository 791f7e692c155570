"""Monte Carlo EM for the hyperparameters ``(a, b, sigma2)``.

The E-step expectation is replaced by averages over a short window of recent
Gibbs samples; the M-step solves the stationarity conditions in closed form
for ``b`` and ``sigma2`` and by Newton-Raphson for ``a``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ObservedMatrix
from .errors import NumericalError
from .gibbs import SIGMA2_FLOOR, FactorState, Hyperparameters, residual_sq_norm
from .special import digamma, trigamma

logger = logging.getLogger(__name__)

__all__ = [
    "SufficientStats",
    "accumulate",
    "update_a_step",
    "update_a",
    "update_b",
    "update_sigma2",
    "em_step",
    "expected_log_joint",
    "A_MIN",
    "A_MAX",
]

A_MIN, A_MAX = 1e-6, 1e6


@dataclass(frozen=True)
class SufficientStats:
    """Window averages <gamma_i>, <ln gamma_i> and <||P_Omega(residual)||^2>."""

    mean_gamma: np.ndarray
    mean_log_gamma: np.ndarray
    mean_residual: float
    window: int

    @property
    def r(self) -> int:
        return len(self.mean_gamma)

    @classmethod
    def from_samples(cls, gammas, residual_norms) -> "SufficientStats":
        """Build from a stack of gamma vectors (window, r) and matching residual norms."""
        g = np.atleast_2d(np.asarray(gammas, dtype=np.float64))
        res = np.asarray(residual_norms, dtype=np.float64).reshape(-1)
        if g.shape[0] == 0 or g.shape[0] != len(res):
            raise ValueError("need a nonempty window with one residual per sample")
        return cls(g.mean(axis=0), np.log(g).mean(axis=0), float(res.mean()), g.shape[0])


def accumulate(window: Sequence[FactorState], data: ObservedMatrix) -> SufficientStats:
    if len(window) == 0:
        raise ValueError("empty EM window")
    return SufficientStats.from_samples([s.gamma for s in window],
                                        [residual_sq_norm(s, data) for s in window])


def _a_equation(a: float, stats: SufficientStats) -> tuple[float, float]:
    r = stats.r
    total = float(np.sum(stats.mean_gamma))
    f = digamma(a) - math.log(r * a / total) - float(np.sum(stats.mean_log_gamma)) / r
    fprime = trigamma(a) - 1.0 / a
    return f, fprime


def update_a_step(a_t: float, stats: SufficientStats) -> float:
    """A single Newton-Raphson step for ``a``, clamped to ``[A_MIN, A_MAX]``."""
    f, fprime = _a_equation(a_t, stats)
    # trigamma(a) > 1/a for every a > 0
    assert fprime > 0, f"trigamma({a_t}) - 1/a = {fprime} is not positive"
    a_next = a_t - f / fprime
    if not math.isfinite(a_next):
        raise NumericalError(f"Newton step for a produced {a_next} (a_t={a_t})")
    if a_next < A_MIN or a_next > A_MAX:
        logger.info("clamping a=%g into [%g, %g]", a_next, A_MIN, A_MAX)
        a_next = min(max(a_next, A_MIN), A_MAX)
    return a_next


def update_a(a_t: float, stats: SufficientStats, tol: float = 1e-8, max_steps: int = 100) -> float:
    """Iterate :func:`update_a_step` until ``|delta a| < tol`` or ``max_steps``."""
    a = float(a_t)
    for _ in range(max_steps):
        a_next = update_a_step(a, stats)
        if abs(a_next - a) < tol:
            return a_next
        a = a_next
    return a


def update_b(a_next: float, stats: SufficientStats) -> float:
    total = float(np.sum(stats.mean_gamma))
    if not total > 0:
        raise NumericalError("sum of <gamma_i> must be positive")
    return stats.r * a_next / total


def update_sigma2(stats: SufficientStats, data: ObservedMatrix) -> float:
    if data.nnz == 0:
        raise ValueError("no observed entries")
    return max(stats.mean_residual / data.nnz, SIGMA2_FLOOR)


def expected_log_joint(hp: Hyperparameters, stats: SufficientStats, nnz: int) -> float:
    """Monte Carlo estimate of E[ln p(d, U, V, gamma, P_Omega(X) | a, b, sigma)], up to a constant."""
    a, b, s2 = hp.a, hp.b, hp.sigma2
    return (-0.5 * nnz * math.log(s2) - stats.mean_residual / (2.0 * s2)
            + float(np.sum(a * math.log(b) - math.lgamma(a) + a * stats.mean_log_gamma
                           - b * stats.mean_gamma)))


def em_step(hp: Hyperparameters, window: Sequence[FactorState] | SufficientStats,
            data: ObservedMatrix, r: int | None = None) -> Hyperparameters:
    """One M-step: ``a`` by Newton iteration, then ``b``, then ``sigma2``."""
    stats = window if isinstance(window, SufficientStats) else accumulate(window, data)
    if r is not None and r != stats.r:
        raise ValueError(f"window has r={stats.r}, expected {r}")
    a = update_a(hp.a, stats)
    b = update_b(a, stats)
    sigma2 = update_sigma2(stats, data)
    new = Hyperparameters(a, b, sigma2)
    logger.debug("EM step: (a, b, sigma2) %r -> %r", (hp.a, hp.b, hp.sigma2),
                 (new.a, new.b, new.sigma2))
    return new
