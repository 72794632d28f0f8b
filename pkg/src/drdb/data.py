"""Observed data container, fold splitting and CSV ingestion."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyArm,
    LengthMismatch,
    MissingColumn,
    NonBinaryTreatment,
    NonFiniteValue,
    TooFewRows,
)


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ObservedData:
    """Rows ``(y, t, x)`` of an observational study.

    Arrays are copied and marked read-only on construction, so instances
    can be shared freely between folds and threads.
    """

    y: np.ndarray
    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        t_raw = np.asarray(self.t)
        x = np.asarray(self.x, dtype=np.float64)
        if y.ndim != 1:
            raise LengthMismatch("y must be one-dimensional")
        n = y.shape[0]
        if x.ndim == 1:
            x = x.reshape(n, -1) if n else x.reshape(0, 0)
        if t_raw.shape != (n,) or x.ndim != 2 or x.shape[0] != n:
            raise LengthMismatch(
                f"y has {n} rows, t has shape {t_raw.shape}, x has shape {x.shape}"
            )
        bad = ~np.isin(t_raw, (0, 1))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NonBinaryTreatment(i, t_raw[i].item())
        if not np.isfinite(y).all():
            raise NonFiniteValue(int(np.flatnonzero(~np.isfinite(y))[0]), "y")
        if not np.isfinite(x).all():
            i, j = np.argwhere(~np.isfinite(x))[0]
            raise NonFiniteValue(int(i), f"x{j + 1}")
        object.__setattr__(self, "y", _frozen(y, np.float64))
        object.__setattr__(self, "t", _frozen(t_raw, np.int8))
        object.__setattr__(self, "x", _frozen(x, np.float64))

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    def take(self, indices):
        """Sub-table of the given rows (order preserved)."""
        idx = np.asarray(indices, dtype=np.intp)
        return ObservedData(self.y[idx], self.t[idx], self.x[idx])


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int

    @property
    def n(self):
        return self.assignments.shape[0]

    def test_indices(self, fold):
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold):
        return np.flatnonzero(self.assignments != fold)

    def sizes(self):
        return np.bincount(self.assignments, minlength=self.k)


@dataclass(frozen=True, eq=False)
class ArmSubset:
    parent: ObservedData
    indices: np.ndarray
    arm: int = field(default=1)

    @property
    def y(self):
        return self.parent.y[self.indices]

    @property
    def x(self):
        return self.parent.x[self.indices]

    def __len__(self):
        return self.indices.shape[0]


def split_folds(n, k, seed, min_per_fold=1):
    """Randomly partition ``range(n)`` into ``k`` folds of near-equal size.

    A uniformly random permutation is cut into ``k`` contiguous blocks; the
    ``n % k`` leftover rows go one each to the first folds. Fold labels are
    ``0..k-1``. The estimators ask for ``min_per_fold=4``.
    """
    if k < 2:
        raise TooFewRows(f"fold count must be at least 2, got {k}")
    if n < min_per_fold * k:
        raise TooFewRows(f"need at least {min_per_fold * k} rows for {k} folds, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    sizes = np.full(k, base)
    sizes[:extra] += 1
    labels = np.repeat(np.arange(k), sizes)
    assignments = np.empty(n, dtype=np.intp)
    assignments[perm] = labels
    assignments.setflags(write=False)
    return FoldPlan(k=k, assignments=assignments, seed=seed)


def arm_subset(data, indices, arm):
    """Rows among ``indices`` whose treatment equals ``arm``."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= data.n):
        raise IndexError("indices out of range")
    picked = idx[data.t[idx] == arm]
    if picked.size == 0:
        raise EmptyArm(f"no rows with t={arm} among {idx.size} indices")
    picked.setflags(write=False)
    return ArmSubset(parent=data, indices=picked, arm=int(arm))


def load_csv(path, encoding="utf-8"):
    """Read a ``y,t,x1..xp`` CSV file into :class:`ObservedData`.

    Covariate columns are recognised by the ``x<j>`` naming and kept in file
    order. Row numbers in error messages count data rows from 1.
    """
    with open(path, newline="", encoding=encoding) as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn("y") from None
        for col in ("y", "t"):
            if col not in header:
                raise MissingColumn(col)
        x_cols = [i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
        iy, it = header.index("y"), header.index("t")
        ys, ts, xs = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise LengthMismatch(f"row {row_no} has {len(row)} fields, expected {len(header)}")
            ys.append(_parse_real(row[iy], row_no, "y"))
            t_val = _parse_real(row[it], row_no, "t")
            if t_val not in (0.0, 1.0):
                raise NonBinaryTreatment(row_no, row[it].strip())
            ts.append(int(t_val))
            xs.append([_parse_real(row[j], row_no, header[j]) for j in x_cols])
    x = np.array(xs, dtype=np.float64).reshape(len(ys), len(x_cols))
    return ObservedData(np.array(ys), np.array(ts, dtype=np.int8), x)


def _parse_real(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise NonFiniteValue(row, column) from None
    if not math.isfinite(value):
        raise NonFiniteValue(row, column)
    return value


def write_csv(data, path):
    """Write ``data`` in the layout :func:`load_csv` reads."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "t"] + [f"x{j + 1}" for j in range(data.p)])
        for i in range(data.n):
            writer.writerow([repr(float(data.y[i])), int(data.t[i])] + [repr(float(v)) for v in data.x[i]])
