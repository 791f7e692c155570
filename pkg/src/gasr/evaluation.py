"""Prediction error metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .data import ObservedMatrix
from .errors import DataError

__all__ = ["MetricReport", "align_predictions", "rmse", "nmae", "round_predictions", "evaluate"]


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    nmae: float
    n_test: int
    value_range: tuple[float, float]
    rounded: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def align_predictions(pred, truth: ObservedMatrix) -> np.ndarray:
    """Predictions for every entry of ``truth``, in ``truth``'s entry order.

    ``pred`` may be an array already aligned with ``truth``, a dense
    ``m x n`` array, a mapping ``(i, j) -> value`` or an
    :class:`ObservedMatrix`.
    """
    if isinstance(pred, ObservedMatrix):
        order = {int(k): e for e, k in enumerate(pred.keys)}
        try:
            idx = np.array([order[int(k)] for k in truth.keys], dtype=np.int64)
        except KeyError as exc:
            i, j = divmod(exc.args[0], truth.n)
            raise DataError(f"no prediction for cell ({i}, {j})") from None
        return pred.vals[idx]
    if isinstance(pred, dict):
        try:
            return np.array([pred[(i, j)] for i, j in zip(truth.rows.tolist(), truth.cols.tolist())],
                            dtype=np.float64)
        except KeyError as exc:
            raise DataError(f"no prediction for cell {exc.args[0]}") from None
    arr = np.asarray(pred, dtype=np.float64)
    if arr.ndim == 2 and arr.shape == truth.shape:
        return arr[truth.rows, truth.cols]
    if arr.ndim == 1 and len(arr) == truth.nnz:
        return arr
    raise DataError(f"predictions of shape {arr.shape} do not cover the {truth.nnz} test entries")


def rmse(pred, truth: ObservedMatrix) -> float:
    if truth.nnz == 0:
        raise DataError("empty test set")
    err = align_predictions(pred, truth) - truth.vals
    scale = float(np.max(np.abs(err)))
    if scale == 0.0 or not math.isfinite(scale):
        return scale
    # rescaled so tiny or huge errors neither underflow nor overflow when squared
    err = err / scale
    return scale * math.sqrt(float(err @ err) / truth.nnz)


def nmae(pred, truth: ObservedMatrix, value_range: tuple[float, float]) -> float:
    """Mean absolute error divided by ``max - min`` of the rating scale."""
    lo, hi = value_range
    if not hi > lo:
        raise DataError(f"degenerate value range {value_range}")
    if truth.nnz == 0:
        raise DataError("empty test set")
    err = np.abs(align_predictions(pred, truth) - truth.vals)
    return float(err.sum()) / truth.nnz / (hi - lo)


def round_predictions(pred, scale):
    """Snap predictions to the nearest value of ``scale`` (ties upward, out of range clamped)."""
    levels = np.unique(np.asarray(list(scale), dtype=np.float64))
    if len(levels) == 0:
        raise ValueError("empty rating scale")

    def snap(x):
        x = np.asarray(x, dtype=np.float64)
        hi = np.clip(np.searchsorted(levels, x, side="left"), 0, len(levels) - 1)
        lo = np.clip(hi - 1, 0, len(levels) - 1)
        take_lo = (x - levels[lo]) < (levels[hi] - x)
        return np.where(take_lo, levels[lo], levels[hi])

    if isinstance(pred, dict):
        keys = list(pred)
        vals = snap([pred[k] for k in keys])
        return {k: float(v) for k, v in zip(keys, vals)}
    if isinstance(pred, ObservedMatrix):
        return ObservedMatrix(pred.m, pred.n, pred.rows, pred.cols, snap(pred.vals),
                              pred.row_ids, pred.col_ids)
    return snap(pred)


def evaluate(pred, truth: ObservedMatrix, value_range: tuple[float, float] | None = None,
             round_to=None) -> MetricReport:
    """RMSE and NMAE on ``truth``; ``value_range`` defaults to the test values' range."""
    p = align_predictions(pred, truth)
    if round_to is not None:
        p = round_predictions(p, round_to)
    if value_range is None:
        value_range = truth.value_range()
    value_range = (float(value_range[0]), float(value_range[1]))
    return MetricReport(rmse(p, truth), nmae(p, truth, value_range), truth.nnz, value_range,
                        round_to is not None)
