"""Digamma / trigamma and the random variate generators used by the sampler.

The scalar draw routines (``gamma_draw``, ``truncnorm_draw``, ...) are numba
kernels that take a ``numpy.random.Generator`` and only consume its
``random``, ``standard_normal`` and ``standard_exponential`` streams, so they
can be called from inside other jitted loops.  The ``sample_*`` functions are
the validated Python-level entry points.
"""

from __future__ import annotations

import math

import numba
import numpy as np

__all__ = [
    "digamma",
    "trigamma",
    "RngStream",
    "as_generator",
    "sample_gamma_dist",
    "sample_truncated_normal",
    "sample_unit_ball_uniform",
    "gamma_draw",
    "truncnorm_draw",
    "std_truncnorm_draw",
    "truncnorm_regime",
]

EULER_GAMMA = 0.57721566490153286061

# Below this the argument is pushed up by recurrence before the asymptotic series.
_ASYMPTOTIC_FROM = 10.0


def digamma(x: float) -> float:
    """Digamma function ``d/dx ln Gamma(x)`` for ``x > 0``.

    Shifts ``x`` above 10 with ``psi(x) = psi(x + 1) - 1/x`` and finishes with
    the asymptotic (Stirling) series.  Relative error is below 1e-13 away
    from the root near 1.4616.
    """
    x = float(x)
    if not x > 0 or not math.isfinite(x):
        raise ValueError(f"digamma requires a finite positive argument, got {x!r}")
    acc = 0.0
    while x < _ASYMPTOTIC_FROM:
        acc -= 1.0 / x
        x += 1.0
    r = 1.0 / (x * x)
    series = r * (1.0 / 12 - r * (1.0 / 120 - r * (1.0 / 252 - r * (1.0 / 240 - r * (
        1.0 / 132 - r * (691.0 / 32760 - r * (1.0 / 12)))))))
    return acc + math.log(x) - 0.5 / x - series


def trigamma(x: float) -> float:
    """Trigamma function ``d^2/dx^2 ln Gamma(x)`` for ``x > 0``."""
    x = float(x)
    if not x > 0 or not math.isfinite(x):
        raise ValueError(f"trigamma requires a finite positive argument, got {x!r}")
    acc = 0.0
    while x < _ASYMPTOTIC_FROM:
        acc += 1.0 / (x * x)
        x += 1.0
    r = 1.0 / (x * x)
    # Bernoulli numbers B2..B14 over x^3, x^5, ...
    series = r * (1.0 / 6 - r * (1.0 / 30 - r * (1.0 / 42 - r * (1.0 / 30 - r * (
        5.0 / 66 - r * (691.0 / 2730 - r * (7.0 / 6)))))))
    return acc + 1.0 / x + 0.5 * r + series / x


class RngStream:
    """Deterministic random stream identified by ``(seed, stream_id)``.

    Backed by the counter-based Philox generator; distinct stream ids are
    derived through ``SeedSequence`` spawn keys and are independent.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def substream(self, stream_id: int) -> "RngStream":
        """A sibling stream sharing this stream's master seed."""
        return RngStream(self.seed, stream_id)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return RngStream(0 if rng is None else int(rng)).generator
    raise TypeError(f"cannot use {type(rng).__name__} as a random stream")


# ---------------------------------------------------------------------------
# gamma

@numba.njit(cache=True)
def _std_gamma(gen, shape):
    # Marsaglia & Tsang squeeze method; shape < 1 boosted via x = y * u**(1/shape).
    boost = 0.0
    if shape < 1.0:
        u = gen.random()
        while u <= 0.0:
            u = gen.random()
        boost = math.log(u) / shape
        shape += 1.0
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = gen.standard_normal()
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = gen.random()
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            break
        if u > 0.0 and math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
            break
    if boost != 0.0:
        return d * v * math.exp(boost)
    return d * v


@numba.njit(cache=True)
def gamma_draw(gen, shape, rate):
    """One draw from Gamma(shape, rate) (density ~ x^(shape-1) exp(-rate x))."""
    return _std_gamma(gen, shape) / rate


# ---------------------------------------------------------------------------
# truncated normal

_SQRT2 = math.sqrt(2.0)
# Acceptance probability targeted by the regime switch.
_MIN_ACCEPT = 0.3
_LOG_MIN_ACCEPT = math.log(1.0 / _MIN_ACCEPT)

NAIVE, UNIFORM, EXPONENTIAL = 0, 1, 2


@numba.njit(cache=True)
def _normal_mass(a, b):
    if a >= 0.0:
        return 0.5 * (math.erfc(a / _SQRT2) - math.erfc(b / _SQRT2))
    if b <= 0.0:
        return 0.5 * (math.erfc(-b / _SQRT2) - math.erfc(-a / _SQRT2))
    return 1.0 - 0.5 * math.erfc(-a / _SQRT2) - 0.5 * math.erfc(b / _SQRT2)


@numba.njit(cache=True)
def truncnorm_regime(a, b):
    """Proposal used for N(0, 1) restricted to ``[a, b]``."""
    if _normal_mass(a, b) >= _MIN_ACCEPT:
        return NAIVE
    if a < 0.0 < b:
        return UNIFORM
    if b <= 0.0:
        a, b = -b, -a
    # one-sided region [a, b] with a >= 0
    if (b - a) * (b + a) <= 2.0 * _LOG_MIN_ACCEPT:
        return UNIFORM
    return EXPONENTIAL


@numba.njit(cache=True)
def _tail_draw(gen, a, b):
    # N(0,1) on [a, b], 0 <= a, via exponential proposal shifted to a.
    lam = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a + gen.standard_exponential() / lam
        if z > b:
            continue
        t = z - lam
        if gen.random() <= math.exp(-0.5 * t * t):
            return z


@numba.njit(cache=True)
def _uniform_draw(gen, a, b):
    # N(0,1) on a finite [a, b] via uniform proposal; envelope at the point nearest 0.
    if a > 0.0:
        peak = a * a
    elif b < 0.0:
        peak = b * b
    else:
        peak = 0.0
    while True:
        z = a + (b - a) * gen.random()
        if gen.random() <= math.exp(0.5 * (peak - z * z)):
            return z


@numba.njit(cache=True)
def std_truncnorm_draw(gen, a, b):
    """One draw from N(0, 1) restricted to ``[a, b]`` (``a < b``, may be infinite)."""
    regime = truncnorm_regime(a, b)
    if regime == NAIVE:
        while True:
            z = gen.standard_normal()
            if a <= z <= b:
                return z
    if regime == UNIFORM:
        return _uniform_draw(gen, a, b)
    if b <= 0.0:
        return -_tail_draw(gen, -b, -a)
    return _tail_draw(gen, a, b)


@numba.njit(cache=True)
def truncnorm_draw(gen, mu, var, lo, hi):
    """One draw from N(mu, var) restricted to ``[lo, hi]``."""
    s = math.sqrt(var)
    z = std_truncnorm_draw(gen, (lo - mu) / s, (hi - mu) / s)
    x = mu + s * z
    # guard against rounding in the affine map
    if x < lo:
        x = lo
    elif x > hi:
        x = hi
    return x


@numba.njit(cache=True)
def _gamma_many(gen, shape, rate, out):
    for i in range(out.shape[0]):
        out[i] = _std_gamma(gen, shape) / rate


@numba.njit(cache=True)
def _truncnorm_many(gen, mu, var, lo, hi, out):
    for i in range(out.shape[0]):
        out[i] = truncnorm_draw(gen, mu, var, lo, hi)


def sample_gamma_dist(shape: float, rate: float, rng, size: int | None = None):
    """Draw from Gamma(shape, rate); a scalar, or an array when ``size`` is given."""
    if not (shape > 0 and rate > 0) or not (math.isfinite(shape) and math.isfinite(rate)):
        raise ValueError(f"gamma parameters must be positive, got shape={shape}, rate={rate}")
    gen = as_generator(rng)
    if size is None:
        return float(gamma_draw(gen, float(shape), float(rate)))
    out = np.empty(int(size))
    _gamma_many(gen, float(shape), float(rate), out)
    return out


def sample_truncated_normal(mu: float, var: float, lo: float, hi: float, rng,
                            size: int | None = None):
    """Draw from N(mu, var) truncated to ``[lo, hi]``.

    Uses plain accept-reject when the interval holds at least 30% of the
    Gaussian mass, a shifted-exponential proposal in one-sided tails and a
    uniform proposal for narrow intervals, so acceptance never collapses.
    """
    if not (math.isfinite(mu) and math.isfinite(var)):
        raise ValueError("mu and var must be finite")
    if var <= 0:
        raise ValueError("var must be positive")
    if not lo < hi:
        raise ValueError(f"empty truncation interval [{lo}, {hi}]")
    gen = as_generator(rng)
    if size is None:
        return float(truncnorm_draw(gen, float(mu), float(var), float(lo), float(hi)))
    out = np.empty(int(size))
    _truncnorm_many(gen, float(mu), float(var), float(lo), float(hi), out)
    return out


def sample_unit_ball_uniform(dim: int, radius: float, rng) -> np.ndarray:
    """Vector with uniformly random direction and Euclidean norm ``radius``."""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    if not 0 < radius <= 1:
        raise ValueError(f"radius must lie in (0, 1], got {radius}")
    gen = as_generator(rng)
    while True:
        x = gen.standard_normal(dim)
        nrm = np.linalg.norm(x)
        if nrm > 0:
            return x * (radius / nrm)
