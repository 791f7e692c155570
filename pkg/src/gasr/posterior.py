"""Posterior-mean prediction, rank recovery and orthonormality diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gibbs import FactorState, predict_entries

__all__ = [
    "PosteriorAccumulator",
    "RankEstimate",
    "accumulate_sample",
    "predict",
    "recover_rank",
    "orthonormality_diagnostics",
]


@dataclass
class PosteriorAccumulator:
    """Running sums of per-sample predictions on a fixed set of target cells.

    ``rows`` / ``cols`` are the target cells; ``None`` for both means the
    full dense ``m x n`` matrix.
    """

    rows: np.ndarray | None = None
    cols: np.ndarray | None = None
    sum_prediction: np.ndarray | None = None
    count: int = 0
    d_sum: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if (self.rows is None) != (self.cols is None):
            raise ValueError("give both rows and cols, or neither")
        if self.rows is not None:
            self.rows = np.asarray(self.rows, dtype=np.int64)
            self.cols = np.asarray(self.cols, dtype=np.int64)

    @property
    def d_mean(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("no samples accumulated")
        return self.d_sum / self.count

    def add(self, state: FactorState) -> "PosteriorAccumulator":
        if self.rows is None:
            pred = state.dense()
        else:
            pred = predict_entries(state, self.rows, self.cols)
        if self.sum_prediction is None:
            self.sum_prediction = np.zeros_like(pred)
            self.d_sum = np.zeros(state.r)
        self.sum_prediction += pred
        self.d_sum += state.d
        self.count += 1
        return self

    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("no samples accumulated")
        return self.sum_prediction / self.count


def accumulate_sample(acc: PosteriorAccumulator, state: FactorState) -> PosteriorAccumulator:
    return acc.add(state)


def predict(acc: PosteriorAccumulator, rows=None, cols=None) -> np.ndarray:
    """Posterior-mean predictions.

    Without ``rows``/``cols`` returns the mean over the accumulator's own
    targets.  With them, looks the cells up among the targets (or in the
    dense mean when the accumulator is dense).
    """
    mean = acc.mean()
    if rows is None:
        return mean
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if acc.rows is None:
        return mean[rows, cols]
    lookup = {(int(i), int(j)): e for e, (i, j) in enumerate(zip(acc.rows, acc.cols))}
    try:
        idx = [lookup[(int(i), int(j))] for i, j in zip(rows, cols)]
    except KeyError as exc:
        raise KeyError(f"cell {exc.args[0]} was not a prediction target") from None
    return mean[np.asarray(idx, dtype=np.int64)]


@dataclass(frozen=True)
class RankEstimate:
    sorted_d: np.ndarray   # ascending
    w: int                 # 1-based position of the cut in sorted_d
    rank: int
    kept_values: np.ndarray


def recover_rank(d) -> RankEstimate:
    """Estimate the number of latent factors from singular-value-like weights.

    Sorts ``d`` ascending, takes the 1-based position ``w >= 2`` of the largest
    consecutive ratio ``d_w / d_{w-1}`` (0/0 counts as 1, x/0 as infinity,
    ties go to the smallest ``w``) and keeps the ``r - w + 1`` values from
    there on.
    """
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    r = len(d)
    if r < 2:
        raise ValueError("need at least two values to locate a gap")
    if np.any(d < 0):
        raise ValueError("values must be nonnegative")
    s = np.sort(d)
    lo, hi = s[:-1], s[1:]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratios = np.where(lo > 0, hi / np.where(lo > 0, lo, 1.0),
                          np.where(hi > 0, np.inf, 1.0))
    w = int(np.argmax(ratios)) + 2  # argmax returns the first maximum
    return RankEstimate(s, w, r - w + 1, s[w - 1:].copy())


def orthonormality_diagnostics(state: FactorState) -> tuple[float, float, float, float]:
    """Mean ``|<u_i, u_j>|`` over pairs ``i < j``, mean ``||u_k||``, likewise for ``V``.

    Returned as ``(inner_U, inner_V, norm_U, norm_V)``.
    """
    if state.r < 2:
        raise ValueError("need r >= 2 for pairwise inner products")
    iu = np.triu_indices(state.r, k=1)

    def stats(F):
        gram = F @ F.T
        return float(np.mean(np.abs(gram[iu]))), float(np.mean(np.sqrt(np.diag(gram))))

    inner_u, norm_u = stats(state.U)
    inner_v, norm_v = stats(state.V)
    return inner_u, inner_v, norm_u, norm_v
