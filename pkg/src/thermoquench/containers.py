"""Shared data containers: sparse symmetric density matrices and time series."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Basis


class Source(str, enum.Enum):
    EXACT = "exact"
    DMQMC = "dmqmc"
    TRUNCATED = "truncated"


@dataclass
class DensityMatrix:
    """Real symmetric matrix stored as its upper triangle in COO form.

    ``rows <= cols`` elementwise; entries are sorted by ``(row, col)`` and
    unique. The value at ``(m, n)`` also serves ``(n, m)``.
    """

    L: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    basis: Basis = Basis.Z
    source: Source = Source.EXACT

    def __post_init__(self):
        r = np.asarray(self.rows, dtype=np.int64)
        c = np.asarray(self.cols, dtype=np.int64)
        v = np.asarray(self.values, dtype=float)
        if not (r.shape == c.shape == v.shape and r.ndim == 1):
            raise ValueError("rows, cols and values must be 1-d arrays of equal length")
        lo, hi = np.minimum(r, c), np.maximum(r, c)
        keys = lo * self.dim + hi
        order = np.argsort(keys, kind="stable")
        if np.any(np.diff(keys[order]) == 0):
            raise ValueError("duplicate entries; use DensityMatrix.from_entries to sum them")
        self.rows, self.cols, self.values = lo[order], hi[order], v[order]
        self.basis = Basis(self.basis)
        self.source = Source(self.source)

    @property
    def dim(self) -> int:
        return 1 << self.L

    @classmethod
    def from_entries(cls, L, rows, cols, values, **kw) -> "DensityMatrix":
        """Build from possibly duplicated upper/lower entries, summing duplicates."""
        D = 1 << L
        r = np.asarray(rows, dtype=np.int64)
        c = np.asarray(cols, dtype=np.int64)
        keys = np.minimum(r, c) * D + np.maximum(r, c)
        uniq, inv = np.unique(keys, return_inverse=True)
        vals = np.bincount(inv.ravel(), weights=np.asarray(values, dtype=float), minlength=len(uniq))
        keep = vals != 0.0
        uniq, vals = uniq[keep], vals[keep]
        return cls(L, uniq // D, uniq % D, vals, **kw)

    @classmethod
    def from_dense(cls, mat: np.ndarray, L: int, threshold: float = 0.0, **kw) -> "DensityMatrix":
        mat = np.asarray(mat)
        r, c = np.triu_indices(mat.shape[0])
        v = mat[r, c]
        keep = np.abs(v) > threshold
        return cls(L, r[keep], c[keep], v[keep], **kw)

    @property
    def keys(self) -> np.ndarray:
        return self.rows * self.dim + self.cols

    @property
    def is_diagonal(self) -> np.ndarray:
        return self.rows == self.cols

    @property
    def trace(self) -> float:
        return float(self.values[self.is_diagonal].sum())

    @property
    def multiplicity(self) -> np.ndarray:
        """1 for diagonal entries, 2 for off-diagonal ones (ordered-pair count)."""
        return np.where(self.is_diagonal, 1, 2)

    @property
    def n_elements(self) -> int:
        return int(self.multiplicity.sum())

    def frobenius_sq(self) -> float:
        return float(np.sum(self.multiplicity * self.values ** 2))

    def __len__(self) -> int:
        return len(self.values)

    def entry(self, m: int, n: int) -> float:
        key = min(m, n) * self.dim + max(m, n)
        i = np.searchsorted(self.keys, key)
        if i < len(self.values) and self.keys[i] == key:
            return float(self.values[i])
        return 0.0

    def ordered_pairs(self):
        """All ordered ``(m, n, value)`` triples, each off-diagonal entry twice."""
        off = ~self.is_diagonal
        rows = np.concatenate([self.rows, self.cols[off]])
        cols = np.concatenate([self.cols, self.rows[off]])
        vals = np.concatenate([self.values, self.values[off]])
        return rows, cols, vals

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        out[self.rows, self.cols] = self.values
        out[self.cols, self.rows] = self.values
        return out

    def normalized(self) -> "DensityMatrix":
        tr = self.trace
        if tr == 0.0:
            raise ZeroDivisionError("cannot normalize a density matrix with zero trace")
        return DensityMatrix(self.L, self.rows, self.cols, self.values / tr, self.basis, self.source)


@dataclass
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    stat_err: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.stat_err is not None:
            self.stat_err = np.asarray(self.stat_err, dtype=float)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "value", "stat_err"])
            for i, t in enumerate(self.times):
                err = "" if self.stat_err is None else repr(float(self.stat_err[i]))
                w.writerow([repr(float(t)), repr(float(self.values[i])), err])

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        with open(Path(path), newline="") as fh:
            rows = list(csv.DictReader(fh))
        times = [float(r["t"]) for r in rows]
        values = [float(r["value"]) for r in rows]
        errs = [r["stat_err"] for r in rows]
        stat = None if all(e == "" for e in errs) else [float(e) for e in errs]
        return cls(np.array(times), np.array(values), None if stat is None else np.array(stat))
