"""Exact-diagonalization reference: spectra, thermal states, Heisenberg dynamics, TDE."""
from __future__ import annotations

import functools
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .containers import DensityMatrix, Source, TimeSeries
from .errors import CapacityError, ConfigError
from .model import (MAX_DENSE_L, ModelParams, Observable, hamiltonian_matrix,
                    observable_diagonal, observable_terms)

DEGENERACY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Spectrum:
    energies: np.ndarray
    vectors: np.ndarray
    params: ModelParams

    def degenerate_blocks(self, tol: float = DEGENERACY_TOL) -> list[slice]:
        """Contiguous index ranges of (numerically) equal energies."""
        cuts = np.flatnonzero(np.diff(self.energies) > tol) + 1
        edges = np.concatenate([[0], cuts, [len(self.energies)]])
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


class SpectrumCache:
    """On-disk spectra keyed by a parameter hash.

    File layout: one JSON header line ``{"L", "params", "dim"}`` followed by
    the energies and the row-major eigenvector matrix as little-endian float64.
    """

    def __init__(self, directory):
        self.directory = Path(directory)

    def path(self, params: ModelParams) -> Path:
        digest = hashlib.sha256(json.dumps(params.as_dict(), sort_keys=True).encode()).hexdigest()
        return self.directory / f"spectrum_{digest[:20]}.bin"

    def load(self, params: ModelParams) -> Spectrum | None:
        p = self.path(params)
        if not p.exists():
            return None
        with open(p, "rb") as fh:
            header = json.loads(fh.readline())
            if header["params"] != params.as_dict():
                return None
            D = header["dim"]
            raw = np.frombuffer(fh.read(), dtype="<f8")
        energies = raw[:D].astype(float)
        vectors = raw[D:].reshape(D, D).astype(float)
        return Spectrum(energies, vectors, params)

    def save(self, spec: Spectrum) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        p = self.path(spec.params)
        header = {"L": spec.params.L, "params": spec.params.as_dict(), "dim": len(spec.energies)}
        with open(p, "wb") as fh:
            fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
            fh.write(np.ascontiguousarray(spec.energies, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(spec.vectors, dtype="<f8").tobytes())
        return p


@functools.lru_cache(maxsize=6)
def _eigh(params: ModelParams) -> Spectrum:
    energies, vectors = np.linalg.eigh(hamiltonian_matrix(params))
    energies.flags.writeable = False
    vectors.flags.writeable = False
    return Spectrum(energies, vectors, params)


def diagonalize(params: ModelParams, max_L: int = MAX_DENSE_L,
                cache: SpectrumCache | None = None) -> Spectrum:
    if params.L > max_L:
        raise CapacityError(
            f"dense diagonalization refused for L={params.L} > {max_L}; "
            "use Krylov propagation (dynamics) instead")
    if cache is not None:
        spec = cache.load(params)
        if spec is not None:
            return spec
    spec = _eigh(params)
    if cache is not None:
        cache.save(spec)
    return spec


def thermal_weights(spec: Spectrum, beta: float) -> np.ndarray:
    if beta < 0:
        raise ConfigError(f"inverse temperature must be >= 0, got {beta}")
    # shift by E_min so exp() cannot overflow; cancels after normalization
    w = np.exp(-beta * (spec.energies - spec.energies[0]))
    return w / w.sum()


def thermal_rho_dense(params: ModelParams, beta: float, spectrum: Spectrum | None = None) -> np.ndarray:
    spec = spectrum or diagonalize(params)
    p = thermal_weights(spec, beta)
    V = spec.vectors
    return (V * p) @ V.T


def thermal_density_matrix(params: ModelParams, beta: float, spectrum: Spectrum | None = None,
                           store_threshold: float = 1e-16) -> DensityMatrix:
    """Normalized ``exp(-beta H)`` in ``params.basis``; tiny entries are not stored."""
    if beta < 0:
        raise ConfigError(f"inverse temperature must be >= 0, got {beta}")
    rho = thermal_rho_dense(params, beta, spectrum)
    return DensityMatrix.from_dense(rho, params.L, threshold=store_threshold,
                                    basis=params.basis, source=Source.EXACT)


def _observable_in_eigenbasis(obs: Observable, spec: Spectrum, cols=slice(None)) -> np.ndarray:
    """``V[:, cols]^T O V[:, cols]`` with O expressed in the spectrum's basis."""
    V = spec.vectors[:, cols]
    if spec.params.basis is obs.diagonal_basis:
        return (V.T * observable_diagonal(obs)) @ V
    return V.T @ observable_terms(obs, spec.params.basis).apply(V)


def _rho_as_dense(rho) -> np.ndarray:
    return rho.to_dense() if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=float)


def heisenberg_expectation(rho: DensityMatrix, obs: Observable, quench: ModelParams, times,
                           spectrum: Spectrum | None = None, chunk: int = 64) -> TimeSeries:
    """Exact ``Tr[rho O(t)]`` with ``O(t) = exp(iH t) O exp(-iH t)``, H the quench Hamiltonian."""
    if rho.L != quench.L or obs.L != quench.L:
        raise ValueError("rho, observable and quench must share L")
    if rho.basis is not quench.basis:
        raise ValueError(f"rho is in the {rho.basis.value}-basis but the quench "
                         f"Hamiltonian is in the {quench.basis.value}-basis")
    spec = spectrum or diagonalize(quench)
    V, E = spec.vectors, spec.energies
    rho_e = V.T @ _rho_as_dense(rho) @ V
    # value(t) = sum_kl A_kl exp(i (E_k - E_l) t), A = O_e * rho_e (both symmetric)
    A = _observable_in_eigenbasis(obs, spec) * rho_e
    times = np.asarray(times, dtype=float)
    values = np.empty(len(times))
    for start in range(0, len(times), chunk):
        t = times[start:start + chunk]
        phase = np.outer(E, t)
        C, S = np.cos(phase), np.sin(phase)
        values[start:start + chunk] = np.sum(C * (A @ C) + S * (A @ S), axis=0)
    return TimeSeries(times, values, meta={"method": "exact", "source": rho.source.value})


def _block_trace_sum(rho_e_diag_fn, obs: Observable, spec: Spectrum, tol: float) -> float:
    total = 0.0
    blocks = spec.degenerate_blocks(tol)
    single = np.array([b.start for b in blocks if b.stop - b.start == 1], dtype=np.int64)
    if len(single):
        V = spec.vectors[:, single]
        if spec.params.basis is obs.diagonal_basis:
            o_kk = observable_diagonal(obs) @ (V * V)
        else:
            o_kk = np.einsum("xk,xk->k", V, observable_terms(obs, spec.params.basis).apply(V))
        total += float(rho_e_diag_fn(single) @ o_kk)
    for b in blocks:
        if b.stop - b.start > 1:
            total += float(np.sum(rho_e_diag_fn(b, block=True) * _observable_in_eigenbasis(obs, spec, b)))
    return total


def tde_average(h0: ModelParams, h1: ModelParams, obs: Observable, beta: float,
                spec0: Spectrum | None = None, spec1: Spectrum | None = None,
                degeneracy_tol: float = DEGENERACY_TOL) -> float:
    """Thermal diagonal-ensemble average.

    Degenerate levels of ``h1`` are treated as blocks: the contribution is
    ``Tr[P rho P O]`` per eigenspace ``P``, independent of the basis chosen
    inside the block.
    """
    if h0.basis is not h1.basis or h0.L != h1.L:
        raise ValueError("h0 and h1 must share L and basis")
    if beta < 0:
        raise ConfigError(f"inverse temperature must be >= 0, got {beta}")
    if beta == 0:
        # infinite temperature: Tr[O] / 2^L, evaluated exactly
        return float(observable_diagonal(obs).sum()) / (1 << obs.L)
    spec0 = spec0 or diagonalize(h0)
    spec1 = spec1 or diagonalize(h1)
    p = thermal_weights(spec0, beta)
    W = spec1.vectors.T @ spec0.vectors  # overlaps <E1|E0>

    def rho_e(idx, block=False):
        if block:
            return (W[idx] * p) @ W[idx].T
        return (W[idx] ** 2) @ p

    return _block_trace_sum(rho_e, obs, spec1, degeneracy_tol)


def diagonal_ensemble(state: np.ndarray, h1: ModelParams, obs: Observable,
                      spec1: Spectrum | None = None, degeneracy_tol: float = DEGENERACY_TOL) -> float:
    """Pure-state diagonal-ensemble value for a normalized real or complex state."""
    spec1 = spec1 or diagonalize(h1)
    c = spec1.vectors.T @ np.asarray(state)

    def rho_e(idx, block=False):
        if block:
            return np.real(np.outer(c[idx], np.conj(c[idx])))
        return np.abs(c[idx]) ** 2

    return _block_trace_sum(rho_e, obs, spec1, degeneracy_tol)


def ground_state_diagonal_ensemble(h0: ModelParams, h1: ModelParams, obs: Observable) -> float:
    return diagonal_ensemble(diagonalize(h0).vectors[:, 0], h1, obs)
