"""Magnitude truncation of density matrices and N_w sweeps.

Element counting follows ordered pairs: a retained off-diagonal entry counts
twice, so a dense matrix has ``N_w = 4^L``.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .containers import DensityMatrix, Source
from .errors import ConsistencyError, ThermoQuenchError
from .exact import diagonalize, thermal_rho_dense
from .model import Basis, ModelParams, rotate_basis

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ["L", "beta", "g0", "h0", "basis", "w_target", "N_w", "achieved_w"]


@dataclass
class TruncatedDensityMatrix:
    rho_w: DensityMatrix
    order: np.ndarray
    cutoff: float
    weight: float
    N_w: int

    @property
    def index_set(self) -> tuple[np.ndarray, np.ndarray]:
        """Retained ordered pairs ``(m, n)``, magnitude-descending."""
        rows, cols = self.rho_w.rows[self.order], self.rho_w.cols[self.order]
        off = rows != cols
        # interleave each off-diagonal entry with its mirror
        m = np.column_stack([rows, np.where(off, cols, -1)]).ravel()
        n = np.column_stack([cols, np.where(off, rows, -1)]).ravel()
        keep = m >= 0
        return m[keep], n[keep]

    def manifest(self) -> dict:
        return {
            "epsilon": self.cutoff,
            "w": self.weight,
            "N_w": self.N_w,
            "retained": [{"m": int(m), "n": int(n), "value": float(v)}
                         for m, n, v in zip(self.rho_w.rows[self.order],
                                            self.rho_w.cols[self.order],
                                            self.rho_w.values[self.order])],
        }

    def write_manifest(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.manifest(), fh, indent=1)


def magnitude_order(rho: DensityMatrix) -> np.ndarray:
    """Stored-entry order by descending |value|, ties by ascending (m, n)."""
    return np.lexsort((rho.keys, -np.abs(rho.values)))


def truncate(rho: DensityMatrix, *, weight: float | None = None, count: int | None = None,
             cutoff: float | None = None, order: np.ndarray | None = None) -> TruncatedDensityMatrix:
    """Keep the largest-magnitude prefix of ``rho`` meeting exactly one target.

    ``weight``: smallest prefix with Frobenius weight >= target.
    ``count``: longest prefix with at most ``count`` ordered elements.
    ``cutoff``: every entry with ``|value| > cutoff``.
    ``order`` may pass a precomputed ``magnitude_order(rho)``.
    """
    if sum(x is not None for x in (weight, count, cutoff)) != 1:
        raise ValueError("give exactly one of weight, count, cutoff")
    if len(rho) == 0:
        raise ValueError("cannot truncate an empty density matrix")
    if order is None:
        order = magnitude_order(rho)
    mags = np.abs(rho.values[order])
    mult = rho.multiplicity[order]
    mass = np.cumsum(mult * mags ** 2)
    total = mass[-1]
    if weight is not None:
        if not 0 < weight <= 1:
            raise ValueError(f"weight target must lie in (0, 1], got {weight}")
        k = int(np.searchsorted(mass, weight ** 2 * total * (1 - 1e-12))) + 1
    elif count is not None:
        k = int(np.searchsorted(np.cumsum(mult), count, side="right"))
    else:
        k = int(np.count_nonzero(mags > cutoff))
    k = min(k, len(order))
    kept = order[:k]
    eps = float(mags[k]) if k < len(mags) else (0.0 if cutoff is None else float(cutoff))
    w = float(np.sqrt(mass[k - 1] / total)) if k else 0.0
    sub = DensityMatrix(rho.L, rho.rows[kept], rho.cols[kept], rho.values[kept],
                        rho.basis, Source.TRUNCATED)
    tr = sub.trace
    if abs(tr) < 1e-12:
        raise ConsistencyError(
            f"truncated density matrix has trace {tr:.3e}; the retained set carries no diagonal weight")
    rho_w = DensityMatrix(rho.L, sub.rows, sub.cols, sub.values / tr, rho.basis, Source.TRUNCATED)
    # rho_w is re-sorted by key; map the magnitude order onto it
    pos = np.searchsorted(rho_w.keys, rho.keys[kept])
    return TruncatedDensityMatrix(rho_w, pos, eps, w, int(mult[:k].sum()))


def weight_of(subset: DensityMatrix, rho: DensityMatrix) -> float:
    total = rho.frobenius_sq()
    if total == 0.0:
        raise ValueError("reference density matrix is empty")
    return float(np.sqrt(subset.frobenius_sq() / total))


def minimal_count_dense(rho: np.ndarray, w_target: float) -> tuple[int, float]:
    """N_w and achieved weight for a dense symmetric matrix (ordered-pair counting)."""
    mags = np.sort(np.abs(rho).ravel())[::-1]
    mass = np.cumsum(mags ** 2)
    k = int(np.searchsorted(mass, w_target ** 2 * mass[-1] * (1 - 1e-12))) + 1
    k = min(k, len(mags))
    return k, float(np.sqrt(mass[k - 1] / mass[-1]))


def sweep_nw(grid, w_target: float = 0.93) -> list[dict]:
    """Minimal N_w reaching ``w_target`` for each ``(L, beta, g0, h0, basis)``.

    Rows that fail (e.g. capacity) are reported with ``N_w = None`` and the
    sweep continues.
    """
    rows = []
    for L, beta, g0, h0, basis in grid:
        row = {"L": L, "beta": beta, "g0": g0, "h0": h0, "basis": Basis(basis).value,
               "w_target": w_target, "N_w": None, "achieved_w": None}
        try:
            params = ModelParams(L, g=g0, h=h0, h_s=1.0 / L)
            rho = thermal_rho_dense(params, beta, diagonalize(params))
            if Basis(basis) is Basis.X:
                rho = rotate_basis(rotate_basis(rho, L).T, L)
            n_w, achieved = minimal_count_dense(rho, w_target)
            row.update(N_w=n_w, achieved_w=achieved)
        except ThermoQuenchError as exc:
            log.warning("sweep row %s failed: %s", row, exc)
            row["error"] = str(exc)
        rows.append(row)
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                        for c in SWEEP_COLUMNS])
