"""Synthetic low-rank matrices with Gaussian noise and a random observation mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ObservedMatrix

__all__ = ["SyntheticSpec", "SyntheticData", "generate", "generate_full"]


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic completion problem.

    ``noise="frobenius"`` scales i.i.d. Gaussian noise so that
    ``||Z||_F / ||E||_F == snr``; ``noise="standard"`` adds unit-variance
    noise and ignores ``snr``.
    """

    m: int
    n: int
    q: int
    missing_rate: float = 0.0
    snr: float = 1.0
    seed: int = 0
    noise: str = "frobenius"

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("dimensions must be positive")
        if not 1 <= self.q <= min(self.m, self.n):
            raise ValueError(f"rank q={self.q} must lie in [1, min(m, n)]")
        if not 0 <= self.missing_rate < 1:
            raise ValueError("missing_rate must lie in [0, 1)")
        if self.snr <= 0:
            raise ValueError("snr must be positive")
        if self.noise not in ("frobenius", "standard"):
            raise ValueError(f"unknown noise model {self.noise!r}")


@dataclass(frozen=True, eq=False)
class SyntheticData:
    observed: ObservedMatrix
    truth: np.ndarray   # noiseless Z = A B^T
    noisy: np.ndarray   # X = Z + E, all cells
    mask: np.ndarray    # boolean, True where observed


def generate_full(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    A = rng.standard_normal((spec.m, spec.q))
    B = rng.standard_normal((spec.n, spec.q))
    Z = A @ B.T
    E = rng.standard_normal((spec.m, spec.n))
    if spec.noise == "frobenius":
        E *= np.linalg.norm(Z) / (spec.snr * np.linalg.norm(E))
    X = Z + E
    n_obs = int(round((1.0 - spec.missing_rate) * spec.m * spec.n))
    cells = np.sort(rng.choice(spec.m * spec.n, size=n_obs, replace=False))
    rows, cols = np.divmod(cells, spec.n)
    mask = np.zeros((spec.m, spec.n), dtype=bool)
    mask[rows, cols] = True
    observed = ObservedMatrix(spec.m, spec.n, rows, cols, X[rows, cols])
    return SyntheticData(observed, Z, X, mask)


def generate(spec: SyntheticSpec) -> tuple[ObservedMatrix, np.ndarray]:
    """Observed entries of ``X = Z + E`` and the noiseless ``Z``."""
    data = generate_full(spec)
    return data.observed, data.truth
