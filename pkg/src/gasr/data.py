"""Sparse observed matrices, ratings-file ingestion and random splitting.

An :class:`ObservedMatrix` stores the observed entries of an ``m x n`` matrix
as parallel ``rows`` / ``cols`` / ``vals`` arrays.  External identifiers found
in ratings files are remapped to dense 0-based indices in order of first
appearance; the identifier tables are kept on the matrix so predictions can be
written back out with the original ids.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "ObservedMatrix",
    "parse_csv_triplets",
    "parse_movielens",
    "read_ratings",
    "preprocess_eachmovie",
    "split",
    "parse_targets",
    "EACHMOVIE_RATING_MAP",
]

# EachMovie stores six rating levels spread over [0, 1].
EACHMOVIE_RATING_MAP = {0.0: 1.0, 0.2: 2.0, 0.4: 3.0, 0.6: 4.0, 0.8: 5.0, 1.0: 6.0}


@dataclass(frozen=True, eq=False)
class ObservedMatrix:
    """Observed entries ``(rows[e], cols[e]) -> vals[e]`` of an ``m x n`` matrix.

    ``row_ids`` / ``col_ids`` optionally hold the external identifier of each
    dense index.
    """

    m: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    row_ids: tuple | None = field(default=None, repr=False)
    col_ids: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.int64).reshape(-1)
        cols = np.ascontiguousarray(self.cols, dtype=np.int64).reshape(-1)
        vals = np.ascontiguousarray(self.vals, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "vals", vals)
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "n", int(self.n))
        if self.m < 1 or self.n < 1:
            raise DataError(f"matrix dimensions must be positive, got {self.m}x{self.n}")
        if not (len(rows) == len(cols) == len(vals)):
            raise DataError("rows, cols and vals must have equal length")
        if len(rows):
            if rows.min() < 0 or rows.max() >= self.m:
                raise DataError("row index out of range")
            if cols.min() < 0 or cols.max() >= self.n:
                raise DataError("column index out of range")
            if not np.all(np.isfinite(vals)):
                raise DataError("observed values must be finite")
            if len(np.unique(self.keys)) != len(rows):
                raise DataError("duplicate (row, col) entries")
        if self.row_ids is not None and len(self.row_ids) != self.m:
            raise DataError("row id table does not match m")
        if self.col_ids is not None and len(self.col_ids) != self.n:
            raise DataError("column id table does not match n")

    @property
    def nnz(self) -> int:
        return len(self.vals)

    @property
    def shape(self) -> tuple[int, int]:
        return self.m, self.n

    @cached_property
    def keys(self) -> np.ndarray:
        """Linear cell index ``i * n + j`` of each entry."""
        return self.rows * self.n + self.cols

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(x)) for i, j, x in zip(self.rows, self.cols, self.vals)]

    # CSR / CSC views used by the sampler kernels.  ``row_order[row_ptr[i]:row_ptr[i+1]]``
    # lists the entry ids in row i; likewise for columns.
    @cached_property
    def row_ptr(self) -> np.ndarray:
        return _pointers(self.rows, self.m)

    @cached_property
    def row_order(self) -> np.ndarray:
        return np.argsort(self.rows, kind="stable").astype(np.int64)

    @cached_property
    def col_ptr(self) -> np.ndarray:
        return _pointers(self.cols, self.n)

    @cached_property
    def col_order(self) -> np.ndarray:
        return np.argsort(self.cols, kind="stable").astype(np.int64)

    def value_range(self) -> tuple[float, float]:
        if self.nnz == 0:
            raise DataError("empty matrix has no value range")
        return float(self.vals.min()), float(self.vals.max())

    def to_dense(self, fill: float = np.nan) -> np.ndarray:
        out = np.full((self.m, self.n), fill, dtype=np.float64)
        out[self.rows, self.cols] = self.vals
        return out

    def subset(self, idx) -> "ObservedMatrix":
        """Matrix with the same shape and id tables holding entries ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        return ObservedMatrix(self.m, self.n, self.rows[idx], self.cols[idx], self.vals[idx],
                              self.row_ids, self.col_ids)

    def to_csv(self, delimiter: str = ",", use_ids: bool = False) -> str:
        """Serialize as ``row,col,value`` lines, values with 17 significant digits."""
        buf = io.StringIO()
        for i, j, x in zip(self.rows, self.cols, self.vals):
            ri = self.row_ids[i] if use_ids and self.row_ids is not None else i
            cj = self.col_ids[j] if use_ids and self.col_ids is not None else j
            buf.write(f"{ri}{delimiter}{cj}{delimiter}{x:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_dense(cls, X: np.ndarray, mask: np.ndarray | None = None) -> "ObservedMatrix":
        X = np.asarray(X, dtype=np.float64)
        if mask is None:
            mask = np.isfinite(X)
        rows, cols = np.nonzero(mask)
        return cls(X.shape[0], X.shape[1], rows, cols, X[rows, cols])


def _pointers(index: np.ndarray, size: int) -> np.ndarray:
    ptr = np.zeros(size + 1, dtype=np.int64)
    np.cumsum(np.bincount(index, minlength=size), out=ptr[1:])
    return ptr


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _read_raw(source, delimiter: str) -> list[tuple[str, str, float, int]]:
    """Split ``source`` into ``(row_id, col_id, value, line_number)`` records."""
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = source
    records = []
    first = True
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(delimiter)]
        if first:
            first = False
            if not _is_number(fields[0]):
                continue  # header
        if len(fields) < 3:
            raise DataError(f"expected at least 3 fields, got {len(fields)}", line=lineno)
        try:
            value = float(fields[2])
        except ValueError:
            raise DataError(f"value {fields[2]!r} is not a number", line=lineno) from None
        if not math.isfinite(value):
            raise DataError(f"value {fields[2]!r} is not finite", line=lineno)
        records.append((fields[0], fields[1], value, lineno))
    return records


def _build(records, duplicates: str) -> ObservedMatrix:
    if duplicates not in ("error", "keep_first"):
        raise ValueError(f"unknown duplicate policy {duplicates!r}")
    row_map: dict[str, int] = {}
    col_map: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    rows, cols, vals = [], [], []
    for rid, cid, value, lineno in records:
        i = row_map.setdefault(rid, len(row_map))
        j = col_map.setdefault(cid, len(col_map))
        if (i, j) in seen:
            if duplicates == "error":
                raise DataError(f"duplicate entry ({rid}, {cid})", line=lineno)
            continue
        seen.add((i, j))
        rows.append(i)
        cols.append(j)
        vals.append(value)
    if not vals:
        raise DataError("no entries in input")
    return ObservedMatrix(len(row_map), len(col_map), np.array(rows), np.array(cols),
                          np.array(vals), tuple(row_map), tuple(col_map))


def parse_csv_triplets(text, delimiter: str = ",", duplicates: str = "error") -> ObservedMatrix:
    """Parse ``row,col,value`` lines into an :class:`ObservedMatrix`.

    ``text`` is a string or an iterable of lines.  Extra fields after the
    value are ignored, and a first line whose first field is not numeric is
    treated as a header.  Row and column ids are remapped densely in order of
    first appearance.

    Raises
    ------
    DataError
        On a malformed line, a duplicate ``(row, col)`` pair (unless
        ``duplicates="keep_first"``) or empty input.
    """
    return _build(_read_raw(text, delimiter), duplicates)


def parse_movielens(text, duplicates: str = "error") -> ObservedMatrix:
    """Parse the ``user::movie::rating::timestamp`` layout of MovieLens 1M."""
    return parse_csv_triplets(text, delimiter="::", duplicates=duplicates)


def read_ratings(path, fmt: str = "csv", duplicates: str = "error") -> ObservedMatrix:
    delimiter = {"csv": ",", "movielens": "::", "tsv": "\t"}.get(fmt)
    if delimiter is None:
        raise ValueError(f"unknown ratings format {fmt!r}")
    with open(path, encoding="utf-8", errors="replace") as fh:
        return parse_csv_triplets(fh, delimiter=delimiter, duplicates=duplicates)


def _lookup(rating_map: dict, value: float) -> float:
    if value in rating_map:
        return float(rating_map[value])
    for k, v in rating_map.items():
        if abs(k - value) <= 1e-9:
            return float(v)
    raise DataError(f"rating value {value!r} not in the rating map")


def preprocess_eachmovie(raw, min_ratings: int = 20,
                         rating_map: dict | None = None) -> ObservedMatrix:
    """Clean an EachMovie-style ratings set.

    Duplicate ``(user, item)`` pairs keep their first occurrence, users with
    fewer than ``min_ratings`` ratings are dropped and values are remapped
    through ``rating_map`` (default: the six levels in ``[0, 1]`` to 1..6).
    Rows are re-indexed densely; the column table is kept.

    ``raw`` is an :class:`ObservedMatrix`, comma-separated text or an
    iterable of ``(row_id, col_id, value)`` triplets (duplicates allowed).
    """
    if min_ratings < 0:
        raise ValueError("min_ratings must be nonnegative")
    if rating_map is None:
        rating_map = EACHMOVIE_RATING_MAP
    if isinstance(raw, ObservedMatrix):
        rid = raw.row_ids or tuple(range(raw.m))
        cid = raw.col_ids or tuple(range(raw.n))
        triplets = [(rid[i], cid[j], x) for i, j, x in zip(raw.rows, raw.cols, raw.vals)]
    elif isinstance(raw, str):
        triplets = [(r, c, x) for r, c, x, _ in _read_raw(raw, ",")]
    else:
        triplets = list(raw)

    seen = set()
    kept = []
    for r, c, x in triplets:
        if (r, c) in seen:
            continue
        seen.add((r, c))
        kept.append((r, c, float(x)))

    counts: dict = {}
    for r, _, _ in kept:
        counts[r] = counts.get(r, 0) + 1
    col_map: dict = {}
    for _, c, _ in kept:
        col_map.setdefault(c, len(col_map))

    row_map: dict = {}
    rows, cols, vals = [], [], []
    for r, c, x in kept:
        if counts[r] < min_ratings:
            continue
        rows.append(row_map.setdefault(r, len(row_map)))
        cols.append(col_map[c])
        vals.append(_lookup(rating_map, x))
    if not vals:
        raise DataError("no users left after filtering")
    return ObservedMatrix(len(row_map), len(col_map), np.array(rows), np.array(cols),
                          np.array(vals), tuple(row_map), tuple(col_map))


def split(src: ObservedMatrix, fractions: Sequence[float], seed) -> list[ObservedMatrix]:
    """Randomly partition the entries of ``src`` into parts of the given sizes.

    Part sizes are ``floor(f * nnz)`` with the leftover entries handed out one
    at a time to the parts in order.  Entries within a part keep their source
    order.  The same seed always yields the same partition.
    """
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)!r}, expected 1")
    nnz = src.nnz
    sizes = [int(np.floor(f * nnz)) for f in fractions]
    leftover = nnz - sum(sizes)
    for k in range(leftover):
        sizes[k % len(sizes)] += 1
    perm = np.random.default_rng(seed).permutation(nnz)
    parts = []
    start = 0
    for size in sizes:
        parts.append(src.subset(np.sort(perm[start:start + size])))
        start += size
    return parts


def iter_triplets(m: ObservedMatrix) -> Iterable[tuple[int, int, float]]:
    return zip(m.rows.tolist(), m.cols.tolist(), m.vals.tolist())


def parse_targets(text, like: ObservedMatrix, delimiter: str = ",") -> ObservedMatrix:
    """Parse triplets whose ids refer to ``like``'s id tables into ``like``'s index space.

    Used for test sets and prediction requests.  The value column must be
    present but may hold a placeholder when only the cells matter.
    """
    row_map = {rid: i for i, rid in enumerate(like.row_ids or [str(i) for i in range(like.m)])}
    col_map = {cid: j for j, cid in enumerate(like.col_ids or [str(j) for j in range(like.n)])}
    rows, cols, vals = [], [], []
    for rid, cid, value, lineno in _read_raw(text, delimiter):
        if rid not in row_map:
            raise DataError(f"unknown row id {rid!r}", line=lineno)
        if cid not in col_map:
            raise DataError(f"unknown column id {cid!r}", line=lineno)
        rows.append(row_map[rid])
        cols.append(col_map[cid])
        vals.append(value)
    if not vals:
        raise DataError("no entries in input")
    return ObservedMatrix(like.m, like.n, np.array(rows), np.array(cols), np.array(vals),
                          like.row_ids, like.col_ids)
