"""Gibbs sampler for adaptive relaxed spectral regularization.

The model approximates ``X`` on the observed set by ``sum_k d_k u_k v_k^T`` with
``d_k >= 0`` and every ``u_k``, ``v_k`` confined to the closed unit ball.  Each
``d_k`` carries an exponential prior with its own rate ``gamma_k``, and
``gamma_k ~ Gamma(a, b)``.  One sweep resamples ``gamma``, then ``d``, then
every element of ``U`` and finally every element of ``V`` from their full
conditionals, all of which are gamma or truncated Gaussian.

The sweep kernels keep the residual ``X - prediction`` over the observed
entries up to date after each coordinate move, so a sweep visits each observed
entry ``O(r)`` times.  ``d_conditional_stats`` / ``uv_conditional_stats``
evaluate the conditional parameters directly from their defining sums and
serve as the readable reference for the kernels.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import numba
import numpy as np

from .data import ObservedMatrix
from .errors import NumericalError
from .special import (as_generator, gamma_draw, sample_gamma_dist, sample_unit_ball_uniform,
                      truncnorm_draw)

__all__ = [
    "FactorState",
    "Hyperparameters",
    "ConditionalStats",
    "SIGMA2_FLOOR",
    "init_state",
    "predict_entries",
    "residuals",
    "residual_sq_norm",
    "log_joint",
    "sample_gamma_coeffs",
    "d_conditional_stats",
    "sample_d",
    "uv_conditional_stats",
    "sample_uv",
    "gibbs_sweep",
    "run_chain",
]

SIGMA2_FLOOR = 1e-12
# slack on the unit-ball constraint for accumulated rounding
NORM_TOL = 1e-12
# A or C below this is treated as an exactly vanishing data term
_DEGENERATE = 1e-300


@dataclass
class FactorState:
    """Current sample: ``d`` (r,), ``U`` (r, m), ``V`` (r, n), ``gamma`` (r,)."""

    d: np.ndarray
    U: np.ndarray
    V: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        self.d = np.ascontiguousarray(self.d, dtype=np.float64)
        self.U = np.ascontiguousarray(self.U, dtype=np.float64)
        self.V = np.ascontiguousarray(self.V, dtype=np.float64)
        self.gamma = np.ascontiguousarray(self.gamma, dtype=np.float64)
        r = len(self.d)
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[0] != r or self.V.shape[0] != r \
                or self.gamma.shape != (r,):
            raise ValueError("inconsistent factor shapes")

    @property
    def r(self) -> int:
        return len(self.d)

    @property
    def m(self) -> int:
        return self.U.shape[1]

    @property
    def n(self) -> int:
        return self.V.shape[1]

    def copy(self) -> "FactorState":
        return FactorState(self.d.copy(), self.U.copy(), self.V.copy(), self.gamma.copy())

    def is_valid(self, tol: float = NORM_TOL) -> bool:
        return bool(np.all(self.d >= 0)
                    and np.all(self.gamma > 0)
                    and np.all(np.sum(self.U ** 2, axis=1) <= 1 + tol)
                    and np.all(np.sum(self.V ** 2, axis=1) <= 1 + tol))

    def dense(self) -> np.ndarray:
        """The full ``m x n`` matrix ``sum_k d_k u_k v_k^T``."""
        return (self.U.T * self.d) @ self.V


@dataclass(frozen=True)
class Hyperparameters:
    """Gamma prior shape ``a`` and rate ``b`` on ``gamma``; noise variance ``sigma2``."""

    a: float
    b: float
    sigma2: float

    def __post_init__(self):
        for name in ("a", "b", "sigma2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"hyperparameter {name} must be finite and positive, got {v}")
        if self.sigma2 < SIGMA2_FLOOR:
            object.__setattr__(self, "sigma2", SIGMA2_FLOOR)


@dataclass(frozen=True)
class ConditionalStats:
    """Parameters of a truncated-Gaussian full conditional.

    For ``d_alpha`` the conditional is ``N(-B/A, sigma2/A)`` on ``[0, inf)``;
    for a factor element it is ``N(-D/C, sigma2/C)`` on ``[-rho, rho]``.
    """

    A: float | None = None
    B: float | None = None
    C: float | None = None
    D: float | None = None
    rho: float | None = None


@contextlib.contextmanager
def _numerical_guard():
    # compiled kernels can only raise builtin exceptions
    try:
        yield
    except ValueError as exc:
        raise NumericalError(str(exc)) from None


def _check_dims(state: FactorState, data: ObservedMatrix):
    if state.m != data.m or state.n != data.n:
        raise ValueError(f"state is {state.m}x{state.n} but data is {data.m}x{data.n}")


def init_state(m: int, n: int, r: int, hp: Hyperparameters, rng,
               init_norm: float = 0.9) -> FactorState:
    """Starting point: random directions of norm ``init_norm``, ``d = 0``, ``gamma ~ Gamma(a+1, b)``."""
    gen = as_generator(rng)
    U = np.stack([sample_unit_ball_uniform(m, init_norm, gen) for _ in range(r)])
    V = np.stack([sample_unit_ball_uniform(n, init_norm, gen) for _ in range(r)])
    gamma = sample_gamma_dist(hp.a + 1.0, hp.b, gen, size=r)
    return FactorState(np.zeros(r), U, V, gamma)


def predict_entries(state: FactorState, rows, cols) -> np.ndarray:
    """``sum_k d_k u_{k,rows} v_{k,cols}`` for paired index arrays."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    return np.einsum("k,ke,ke->e", state.d, state.U[:, rows], state.V[:, cols])


def residuals(state: FactorState, data: ObservedMatrix) -> np.ndarray:
    _check_dims(state, data)
    out = np.empty(data.nnz)
    _residual_kernel(data.rows, data.cols, data.vals, state.d, state.U, state.V, out)
    return out


def residual_sq_norm(state: FactorState, data: ObservedMatrix) -> float:
    """``||P_Omega(X - sum_k d_k u_k v_k^T)||_F^2``."""
    res = residuals(state, data)
    return float(res @ res)


def log_joint(state: FactorState, hp: Hyperparameters, data: ObservedMatrix) -> float:
    """Log joint density of ``(d, U, V, gamma, P_Omega(X))`` given ``(a, b, sigma2)``.

    Exact up to an additive constant that does not depend on the state;
    ``-inf`` outside the support.
    """
    _check_dims(state, data)
    if not state.is_valid():
        return -math.inf
    a, b, s2 = hp.a, hp.b, hp.sigma2
    data_term = -0.5 * data.nnz * math.log(2.0 * s2 * math.pi) \
        - residual_sq_norm(state, data) / (2.0 * s2)
    prior = state.r * (a * math.log(b) - math.lgamma(a)) \
        + float(np.sum(a * np.log(state.gamma) - (b + state.d) * state.gamma))
    return data_term + prior


def sample_gamma_coeffs(state: FactorState, hp: Hyperparameters, rng) -> FactorState:
    """Resample every ``gamma_k ~ Gamma(a + 1, b + d_k)`` in place."""
    _gamma_kernel(as_generator(rng), state.d, state.gamma, hp.a, hp.b)
    return state


def d_conditional_stats(state: FactorState, hp: Hyperparameters, data: ObservedMatrix,
                        alpha: int) -> ConditionalStats:
    """``(A, B)`` of the conditional of ``d_alpha``, from their defining sums."""
    _check_dims(state, data)
    ua = state.U[alpha, data.rows]
    va = state.V[alpha, data.cols]
    A = float(np.sum((ua * va) ** 2))
    others = np.arange(state.r) != alpha
    cross = np.einsum("k,ke,ke->e", state.d[others], state.U[others][:, data.rows],
                      state.V[others][:, data.cols])
    B = float(np.sum(ua * va * cross - data.vals * ua * va)) + hp.sigma2 * state.gamma[alpha]
    return ConditionalStats(A=A, B=B)


def uv_conditional_stats(state: FactorState, hp: Hyperparameters, data: ObservedMatrix,
                         alpha: int, beta: int, side: str = "U") -> ConditionalStats:
    """``(C, D, rho)`` of the conditional of ``u_{alpha,beta}`` (or ``v_{alpha,beta}``).

    ``alpha`` indexes the latent dimension and ``beta`` the row (column for
    ``side="V"``).  ``rho**2`` is one minus the squared norm of the other
    elements of the same factor vector.
    """
    _check_dims(state, data)
    if side == "U":
        F, G, own, other = state.U, state.V, data.rows, data.cols
    elif side == "V":
        F, G, own, other = state.V, state.U, data.cols, data.rows
    else:
        raise ValueError(f"side must be 'U' or 'V', got {side!r}")
    sel = own == beta
    idx = other[sel]
    x = data.vals[sel]
    da = state.d[alpha]
    ga = G[alpha, idx]
    C = float(np.sum(da ** 2 * ga ** 2))
    ks = np.arange(state.r) != alpha
    cross = np.einsum("k,k,ke->e", state.d[ks], F[ks, beta], G[ks][:, idx])
    D = float(np.sum(da * ga * cross - da * x * ga))
    rest = float(np.sum(F[alpha] ** 2) - F[alpha, beta] ** 2)
    rho2 = 1.0 - rest
    if rho2 < -NORM_TOL:
        raise NumericalError(f"factor vector {side}[{alpha}] left the unit ball (rho^2 = {rho2})")
    return ConditionalStats(C=C, D=D, rho=math.sqrt(max(rho2, 0.0)))


def sample_d(state: FactorState, hp: Hyperparameters, data: ObservedMatrix, rng) -> FactorState:
    """Resample ``d_1, ..., d_r`` in order, in place."""
    _check_dims(state, data)
    res = residuals(state, data)
    _d_kernel(as_generator(rng), data.rows, data.cols, res, state.d, state.U, state.V,
              state.gamma, hp.sigma2)
    return state


def sample_uv(state: FactorState, hp: Hyperparameters, data: ObservedMatrix, rng) -> FactorState:
    """Resample every element of ``U`` and then of ``V``, in place."""
    _check_dims(state, data)
    gen = as_generator(rng)
    res = residuals(state, data)
    with _numerical_guard():
        _factor_kernel(gen, state.U, state.V, state.d, res, data.row_ptr, data.row_order,
                       data.cols, hp.sigma2)
        _factor_kernel(gen, state.V, state.U, state.d, res, data.col_ptr, data.col_order,
                       data.rows, hp.sigma2)
    return state


def gibbs_sweep(state: FactorState, hp: Hyperparameters, data: ObservedMatrix, rng,
                count_ops: bool = False):
    """One systematic scan ``gamma -> d -> U -> V``, updating ``state`` in place.

    With ``count_ops=True`` also returns the number of observed-entry visits
    made by the inner loops.
    """
    _check_dims(state, data)
    if data.nnz == 0:
        raise ValueError("cannot sample without observed entries")
    res = np.empty(data.nnz)
    with _numerical_guard():
        ops = _sweep_kernel(as_generator(rng), data.rows, data.cols, data.vals, data.row_ptr,
                            data.row_order, data.col_ptr, data.col_order, state.d, state.U,
                            state.V, state.gamma, hp.a, hp.b, hp.sigma2, res)
    if count_ops:
        return state, int(ops)
    return state


def run_chain(state: FactorState, hp: Hyperparameters, data: ObservedMatrix, rng,
              n_sweeps: int) -> np.ndarray:
    """Run ``n_sweeps`` sweeps at fixed hyperparameters; returns the ``d`` trace (n_sweeps, r)."""
    _check_dims(state, data)
    trace = np.empty((int(n_sweeps), state.r))
    with _numerical_guard():
        _chain_kernel(as_generator(rng), data.rows, data.cols, data.vals, data.row_ptr,
                      data.row_order, data.col_ptr, data.col_order, state.d, state.U, state.V,
                      state.gamma, hp.a, hp.b, hp.sigma2, trace)
    return trace


# ---------------------------------------------------------------------------
# kernels

@numba.njit(cache=True)
def _residual_kernel(rows, cols, vals, d, U, V, out):
    r = d.shape[0]
    for e in range(vals.shape[0]):
        i = rows[e]
        j = cols[e]
        s = 0.0
        for k in range(r):
            s += d[k] * U[k, i] * V[k, j]
        out[e] = vals[e] - s


@numba.njit(cache=True)
def _gamma_kernel(gen, d, gamma, a, b):
    for k in range(d.shape[0]):
        gamma[k] = gamma_draw(gen, a + 1.0, b + d[k])


@numba.njit(cache=True)
def _d_kernel(gen, rows, cols, res, d, U, V, gamma, sigma2):
    nnz = res.shape[0]
    for k in range(d.shape[0]):
        dk = d[k]
        A = 0.0
        S = 0.0
        for e in range(nnz):
            t = U[k, rows[e]] * V[k, cols[e]]
            A += t * t
            S += t * (res[e] + dk * t)
        B = sigma2 * gamma[k] - S
        if A < _DEGENERATE:
            new = gen.standard_exponential() / gamma[k]
        else:
            new = truncnorm_draw(gen, -B / A, sigma2 / A, 0.0, np.inf)
        delta = new - dk
        if delta != 0.0:
            for e in range(nnz):
                res[e] -= delta * U[k, rows[e]] * V[k, cols[e]]
        d[k] = new
    return 2 * nnz * d.shape[0]


@numba.njit(cache=True)
def _factor_kernel(gen, F, G, d, res, ptr, order, other, sigma2):
    # F: factor being resampled (r, size); G: the opposite factor.
    r, size = F.shape
    visits = 0
    for k in range(r):
        dk = d[k]
        norm2 = 0.0
        for b in range(size):
            norm2 += F[k, b] * F[k, b]
        for b in range(size):
            old = F[k, b]
            rest = norm2 - old * old
            rho2 = 1.0 - rest
            if rho2 < -NORM_TOL:
                raise ValueError("factor vector left the unit ball")
            rho = math.sqrt(rho2) if rho2 > 0.0 else 0.0
            start = ptr[b]
            stop = ptr[b + 1]
            C = 0.0
            S = 0.0
            for p in range(start, stop):
                e = order[p]
                g = G[k, other[e]]
                C += g * g
                S += g * (res[e] + dk * old * g)
            C *= dk * dk
            D = -dk * S
            if rho == 0.0:
                new = 0.0
            elif C < _DEGENERATE:
                new = -rho + 2.0 * rho * gen.random()
            else:
                new = truncnorm_draw(gen, -D / C, sigma2 / C, -rho, rho)
            delta = (new - old) * dk
            if delta != 0.0:
                for p in range(start, stop):
                    e = order[p]
                    res[e] -= delta * G[k, other[e]]
            F[k, b] = new
            norm2 = rest + new * new
            visits += 2 * (stop - start)
    return visits


@numba.njit(cache=True)
def _sweep_kernel(gen, rows, cols, vals, row_ptr, row_order, col_ptr, col_order,
                  d, U, V, gamma, a, b, sigma2, res):
    _residual_kernel(rows, cols, vals, d, U, V, res)
    _gamma_kernel(gen, d, gamma, a, b)
    ops = _d_kernel(gen, rows, cols, res, d, U, V, gamma, sigma2)
    ops += _factor_kernel(gen, U, V, d, res, row_ptr, row_order, cols, sigma2)
    ops += _factor_kernel(gen, V, U, d, res, col_ptr, col_order, rows, sigma2)
    return ops


@numba.njit(cache=True)
def _chain_kernel(gen, rows, cols, vals, row_ptr, row_order, col_ptr, col_order,
                  d, U, V, gamma, a, b, sigma2, trace):
    res = np.empty(vals.shape[0])
    for t in range(trace.shape[0]):
        _sweep_kernel(gen, rows, cols, vals, row_ptr, row_order, col_ptr, col_order,
                      d, U, V, gamma, a, b, sigma2, res)
        trace[t, :] = d
