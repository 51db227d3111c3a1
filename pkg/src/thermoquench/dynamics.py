"""Time-dependent matrix elements, mixed-state reconstruction and error channels.

``<O(t)> = sum_{n,m} rho_nm O_nm(t)`` with ``O_nm(t) = <n(t)|O|m(t)>`` and
``|x(t)> = exp(-i H t)|x>``. Only orbit representatives are propagated;
every other retained pair is read off through the plan's sign and
conjugation flags.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .containers import TimeSeries
from .errors import ConsistencyError, PropagationError
from .exact import Spectrum, diagonalize
from .model import MAX_DENSE_L, BasisState, ModelParams, Observable, hamiltonian_terms, observable_terms
from .symmetry import OrbitPlan, plan_simulations
from .truncation import TruncatedDensityMatrix, magnitude_order, truncate

log = logging.getLogger(__name__)

RESIDUE_TOL = 1e-9


class Method(str, enum.Enum):
    EIGEN = "eigen"
    KRYLOV = "krylov"


def default_method(L: int) -> Method:
    return Method.EIGEN if L <= MAX_DENSE_L else Method.KRYLOV


def default_times(t_max: float = 10.0, points: int = 201) -> np.ndarray:
    return np.linspace(0.0, t_max, points)


@dataclass
class MatrixElementSeries:
    pair: tuple[int, int]
    times: np.ndarray
    values: np.ndarray
    method: Method

    def conj(self) -> "MatrixElementSeries":
        return MatrixElementSeries((self.pair[1], self.pair[0]), self.times, np.conj(self.values), self.method)


class EigenPropagator:
    method = Method.EIGEN

    def __init__(self, h1: ModelParams, spectrum: Spectrum | None = None):
        self.h1 = h1
        self.spec = spectrum or diagonalize(h1)

    def start(self, states: np.ndarray, t0: float = 0.0):
        coeffs = self.spec.vectors.T @ states
        V, E = self.spec.vectors, self.spec.energies

        def at(t):
            ph = np.exp(-1j * E * (t - t0))[:, None] * coeffs
            return V @ np.ascontiguousarray(ph.real) + 1j * (V @ np.ascontiguousarray(ph.imag))
        return at


class KrylovPropagator:
    """Block Lanczos-exponential propagator on the sparse Hamiltonian.

    Each column gets its own Krylov space (full reorthogonalization). The
    dimension grows until the a-posteriori error estimate
    ``beta_k |[exp(-i h T_k)]_{k,1}|`` drops below ``tol``; if it does not
    within ``krylov_dim`` vectors, the substep is halved.
    """

    method = Method.KRYLOV

    def __init__(self, h1: ModelParams, krylov_dim: int = 30, tol: float = 1e-9,
                 max_halvings: int = 30, block: int = 8):
        self.h1 = h1
        # complex storage avoids an upcast copy of the matrix on every product
        self.H = hamiltonian_terms(h1).to_sparse().astype(complex)
        self.krylov_dim = krylov_dim
        self.tol = tol
        self.max_halvings = max_halvings
        self.block = block
        self.n_matvec = 0

    def _small_exp(self, alpha, beta, k, h):
        """``exp(-i h T_k) e_1`` per column; ``alpha`` (B, k), ``beta`` (B, k)."""
        B = alpha.shape[0]
        T = np.zeros((B, k, k))
        i = np.arange(k)
        T[:, i, i] = alpha[:, :k]
        T[:, i[:-1], i[1:]] = beta[:, :k - 1]
        T[:, i[1:], i[:-1]] = beta[:, :k - 1]
        w, U = np.linalg.eigh(T)
        return np.einsum("bij,bj,bj->bi", U, np.exp(-1j * h * w), U[:, 0, :])

    def _step(self, psi: np.ndarray, h: float) -> tuple[np.ndarray, float]:
        """Advance rows of ``psi`` (B, D) by at most ``h``; return the state and the step taken."""
        B, D = psi.shape
        kmax = self.krylov_dim
        norms = np.linalg.norm(psi, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        K = np.zeros((B, kmax + 1, D), dtype=complex)
        K[:, 0] = psi / safe[:, None]
        alpha = np.zeros((B, kmax))
        beta = np.zeros((B, kmax))
        k = kmax
        for j in range(kmax):
            w = (self.H @ K[:, j].T).T
            self.n_matvec += B
            basis = K[:, :j + 1]
            coef = np.matmul(basis, w.conj()[:, :, None])[:, :, 0].conj()
            alpha[:, j] = coef[:, j].real
            w = w - np.matmul(coef[:, None, :], basis)[:, 0]
            coef2 = np.matmul(basis, w.conj()[:, :, None])[:, :, 0].conj()
            w = w - np.matmul(coef2[:, None, :], basis)[:, 0]
            b = np.linalg.norm(w, axis=1)
            beta[:, j] = b
            live = b > 1e-13
            K[live, j + 1] = w[live] / b[live, None]
            y = self._small_exp(alpha, beta, j + 1, h)
            if np.max(b * np.abs(y[:, j])) <= self.tol:
                k = j + 1
                break
        # shrink the substep until the estimate is met with the space we have
        step = h
        for _ in range(self.max_halvings + 1):
            y = self._small_exp(alpha, beta, k, step)
            err = float(np.max(beta[:, k - 1] * np.abs(y[:, k - 1])))
            if err <= self.tol:
                out = np.matmul(y[:, None, :], K[:, :k])[:, 0] * norms[:, None]
                return out, step
            step /= 2
        raise PropagationError(
            f"Krylov step failed: error estimate {err:.3e} > tol {self.tol:.1e} at substep {step:.3e} "
            f"(krylov_dim={kmax}, L={self.h1.L})")

    def advance(self, psi: np.ndarray, dt: float) -> np.ndarray:
        """Rows of ``psi`` propagated by ``dt`` (any sign)."""
        done = 0.0
        out = psi
        while abs(dt - done) > 1e-14 * max(1.0, abs(dt)):
            out, taken = self._step(out, dt - done)
            done += taken
        return out

    def start(self, states: np.ndarray, t0: float = 0.0):
        cur = {"t": t0, "psi": np.asarray(states, dtype=complex).T.copy()}

        def at(t):
            dt = t - cur["t"]
            if dt != 0.0:
                psi = cur["psi"]
                for s in range(0, psi.shape[0], self.block):
                    psi[s:s + self.block] = self.advance(psi[s:s + self.block], dt)
                cur["t"] = t
            return cur["psi"].T.copy()
        return at


def make_propagator(h1: ModelParams, method: Method | str | None = None, **kw):
    method = default_method(h1.L) if method is None else Method(method)
    if method is Method.EIGEN:
        return EigenPropagator(h1, **kw)
    return KrylovPropagator(h1, **kw)


def evolve_state(h1: ModelParams, state, times, method=None, propagator=None) -> np.ndarray:
    """Columns ``exp(-i H t_k)|state>`` for each time."""
    state = np.asarray(state, dtype=complex)
    nrm = np.linalg.norm(state)
    if abs(nrm - 1.0) > 1e-9:
        raise ValueError(f"input state must be normalized (norm {nrm:.3e})")
    prop = propagator or make_propagator(h1, method)
    at = prop.start(state[:, None])
    return np.column_stack([at(t)[:, 0] for t in np.asarray(times, dtype=float)])


def _basis_columns(indices, D: int) -> np.ndarray:
    out = np.zeros((D, len(indices)))
    out[indices, np.arange(len(indices))] = 1.0
    return out


def pair_series(pairs: np.ndarray, obs: Observable, h1: ModelParams, times, method=None,
                propagator=None) -> np.ndarray:
    """``O_nm(t)`` for each row ``(n, m)`` of ``pairs``; shape (P, T), complex."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    times = np.asarray(times, dtype=float)
    out = np.zeros((len(pairs), len(times)), dtype=complex)
    if len(pairs) == 0:
        return out
    uniq, inv = np.unique(pairs.ravel(), return_inverse=True)
    inv = inv.reshape(-1, 2)
    prop = propagator or make_propagator(h1, method)
    O = observable_terms(obs, h1.basis)
    at = prop.start(_basis_columns(uniq, h1.dim))
    for k, t in enumerate(times):
        psi = at(t)
        opsi = O.apply(psi)
        out[:, k] = np.einsum("dp,dp->p", psi[:, inv[:, 0]].conj(), opsi[:, inv[:, 1]])
    return out


def matrix_element_series(n: BasisState, m: BasisState, obs: Observable, h1: ModelParams, times,
                          method=None, propagator=None) -> MatrixElementSeries:
    if not (n.L == m.L == obs.L == h1.L):
        raise ValueError("states, observable and Hamiltonian must share L")
    if n.basis is not h1.basis or m.basis is not h1.basis:
        raise ValueError("states must be expressed in the Hamiltonian's basis")
    prop = propagator or make_propagator(h1, method)
    vals = pair_series([[n.bits, m.bits]], obs, h1, times, propagator=prop)[0]
    return MatrixElementSeries((n.bits, m.bits), np.asarray(times, dtype=float), vals, prop.method)


def representative_series(plan: OrbitPlan, h1: ModelParams, times, method=None, propagator=None) -> np.ndarray:
    return pair_series(plan.representatives, plan.observable, h1, times, method, propagator)


def expand(plan: OrbitPlan, rep_values: np.ndarray) -> np.ndarray:
    """Series for every non-excluded pair of the plan, from the representatives' series."""
    vals = rep_values[plan.rep_index]
    vals = np.where(plan.conj[:, None], np.conj(vals), vals)
    return plan.sign[:, None] * vals


def _rho_at_pairs(trunc: TruncatedDensityMatrix, pairs: np.ndarray) -> np.ndarray:
    rho = trunc.rho_w
    D = rho.dim
    a, b = pairs[:, 0], pairs[:, 1]
    keys = np.minimum(a, b) * D + np.maximum(a, b)
    pos = np.clip(np.searchsorted(rho.keys, keys), 0, len(rho.keys) - 1)
    if not np.all(rho.keys[pos] == keys):
        raise ValueError("plan contains pairs that are not retained by the truncation")
    return rho.values[pos]


def _contract(weights: np.ndarray, series: np.ndarray) -> np.ndarray:
    """``sum_p weights[p] * series[p, :]`` with pairwise (tree) summation over ``p``."""
    terms = weights[:, None] * series
    while terms.shape[0] > 1:
        if terms.shape[0] % 2:
            terms = np.concatenate([terms, np.zeros((1, terms.shape[1]), dtype=terms.dtype)])
        terms = terms[0::2] + terms[1::2]
    return terms[0] if len(terms) else np.zeros(series.shape[1], dtype=series.dtype)


@dataclass
class Reconstruction:
    series: TimeSeries
    plan: OrbitPlan
    rep_values: np.ndarray
    pair_values: np.ndarray = field(repr=False)


def reconstruct_full(trunc: TruncatedDensityMatrix, plan: OrbitPlan, obs: Observable, h1: ModelParams,
                     times, method=None, propagator=None, errors: dict | None = None) -> Reconstruction:
    if plan.observable != obs or plan.L != h1.L:
        raise ValueError("orbit plan does not match the observable / quench")
    times = np.asarray(times, dtype=float)
    reps = representative_series(plan, h1, times, method, propagator)
    pair_vals = expand(plan, reps)
    weights = _rho_at_pairs(trunc, plan.pairs)
    total = _contract(weights, pair_vals)
    residue = float(np.max(np.abs(total.imag), initial=0.0))
    if residue >= RESIDUE_TOL:
        raise ConsistencyError(f"reconstruction has imaginary residue {residue:.3e} >= {RESIDUE_TOL}")
    stat = None
    if errors is not None:
        stat = band_from_pairs(plan.pairs, pair_vals, errors)
    meta = {"w": trunc.weight, "N_w": trunc.N_w, "N_sim": plan.N_sim,
            "source": trunc.rho_w.source.value,
            "method": (propagator.method if propagator else
                       (default_method(h1.L) if method is None else Method(method))).value}
    return Reconstruction(TimeSeries(times, total.real, stat, meta), plan, reps, pair_vals)


def reconstruct(trunc: TruncatedDensityMatrix, plan: OrbitPlan, obs: Observable, h1: ModelParams,
                times, method=None, propagator=None, errors: dict | None = None) -> TimeSeries:
    """``Re sum_p rho^w_p O_p(t)`` over the retained ordered pairs."""
    return reconstruct_full(trunc, plan, obs, h1, times, method, propagator, errors).series


def identity_plan(index_set, obs: Observable, L: int) -> OrbitPlan:
    """Plan without symmetry reduction: every retained pair simulated directly."""
    a, b = (np.asarray(x, dtype=np.int64) for x in index_set)
    D = 1 << L
    keys = np.unique(a * D + b)
    pairs = np.column_stack([keys // D, keys % D])
    P = len(pairs)
    return OrbitPlan(L, obs, pairs.copy(), pairs, np.arange(P), np.ones(P, dtype=np.int8),
                     np.zeros(P, dtype=bool), np.empty((0, 2), dtype=np.int64))


def band_from_pairs(pairs: np.ndarray, pair_values: np.ndarray, errors: dict) -> np.ndarray:
    D_err = np.empty(len(pairs))
    for i, (a, b) in enumerate(pairs):
        key = (int(min(a, b)), int(max(a, b)))
        if key not in errors:
            raise KeyError(f"no statistical error supplied for retained pair {key}")
        D_err[i] = errors[key]
    return np.sqrt(np.sum((D_err[:, None] * np.abs(pair_values)) ** 2, axis=0))


def statistical_band(series_by_pair: dict, element_errors: dict, times) -> np.ndarray:
    """``sqrt(sum_{(n,m)} (Delta_mn |O_nm(t)|)^2)`` over the given ordered pairs."""
    times = np.asarray(times, dtype=float)
    if not series_by_pair:
        return np.zeros(len(times))
    pairs = np.array(list(series_by_pair.keys()), dtype=np.int64).reshape(-1, 2)
    vals = np.array([np.asarray(v.values if isinstance(v, MatrixElementSeries) else v)
                     for v in series_by_pair.values()])
    if vals.shape[1] != len(times):
        raise ValueError("series and time grid have different lengths")
    return band_from_pairs(pairs, vals, element_errors)


def truncation_error(exact: TimeSeries, truncated: TimeSeries) -> float:
    """Relative time-averaged RMS deviation (trapezoidal rule on the shared grid)."""
    if exact.times.shape != truncated.times.shape or not np.allclose(exact.times, truncated.times,
                                                                      rtol=0, atol=1e-12):
        raise ValueError("exact and truncated series live on different time grids")
    t = exact.times
    num = np.trapezoid(np.abs(exact.values - truncated.values) ** 2, t)
    den = np.trapezoid(np.abs(exact.values) ** 2, t)
    if den == 0.0:
        raise ZeroDivisionError("exact series is identically zero; relative error undefined")
    return float(np.sqrt(num / den))


def truncate_to_nsim(rho, obs: Observable, h1: ModelParams, n_sim: int) -> tuple[TruncatedDensityMatrix, OrbitPlan]:
    """Longest magnitude-ordered prefix of ``rho`` whose orbit plan needs at most ``n_sim`` runs."""
    order = magnitude_order(rho)
    mult = rho.multiplicity[order]

    def attempt(k):
        tr = truncate(rho, count=int(mult[:k].sum()), order=order)
        return tr, plan_simulations(tr.index_set, obs, h1)

    best = attempt(1)
    if best[1].N_sim > n_sim:
        return best
    # gallop to bracket the boundary, then bisect; N_sim never decreases with k
    lo, hi = 1, 2
    while hi <= len(order):
        cand = attempt(hi)
        if cand[1].N_sim > n_sim:
            break
        lo, best = hi, cand
        hi *= 2
    hi = min(hi, len(order) + 1) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        cand = attempt(mid)
        if cand[1].N_sim <= n_sim:
            lo, best = mid, cand
        else:
            hi = mid - 1
    return best
