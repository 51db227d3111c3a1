"""Density-matrix quantum Monte Carlo for the unnormalized thermal state.

Signed walkers ("psips") live on density-matrix elements and unravel the
symmetric Bloch equation ``d rho/d beta = -(H rho + rho H) / 2`` starting
from the identity at ``beta = 0``.

Because the initial state and the update are symmetric under transposition,
the population is stored folded: the count on key ``(m, n)`` with ``m <= n``
is the sum of the two ordered elements ``(m, n)`` and ``(n, m)``. Every
psip is still moved independently; per step and per element the number of
psips taking a given move is a binomial draw, which is the same distribution
as flipping one coin per psip.
"""
from __future__ import annotations

import functools
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .containers import DensityMatrix, Source
from .errors import ConfigError, SamplingError
from .model import Basis, ModelParams, PauliTerms, hamiltonian_terms

log = logging.getLogger(__name__)

DEFAULT_DELTA_BETA = 0.01
DEFAULT_LOOPS = 10
STABILITY_LIMIT = 0.5
DEFAULT_DAMPING = 0.5

_INIT_STREAM = 0
_STEP_STREAM = 1


def _rng(seed: int, loop: int, stream: int, step: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, loop, stream, step]))


@functools.lru_cache(maxsize=8)
def _terms(params: ModelParams) -> PauliTerms:
    return hamiltonian_terms(params)


@dataclass
class PsipPopulation:
    L: int
    keys: np.ndarray
    counts: np.ndarray
    delta_beta: float
    seed: int
    basis: Basis = Basis.Z
    loop: int = 0
    steps: int = 0
    shift: float = 0.0

    @property
    def dim(self) -> int:
        return 1 << self.L

    @property
    def beta_current(self) -> float:
        return self.steps * self.delta_beta

    @property
    def rows(self) -> np.ndarray:
        return self.keys // self.dim

    @property
    def cols(self) -> np.ndarray:
        return self.keys % self.dim

    @property
    def total_psips(self) -> int:
        return int(np.abs(self.counts).sum())

    @property
    def diag_total(self) -> int:
        return int(self.counts[self.rows == self.cols].sum())

    def count(self, m: int, n: int) -> int:
        """Folded count on ``(m, n)``, read symmetrically."""
        key = min(m, n) * self.dim + max(m, n)
        i = np.searchsorted(self.keys, key)
        return int(self.counts[i]) if i < len(self.keys) and self.keys[i] == key else 0

    def estimate(self) -> DensityMatrix:
        """Normalized estimator ``rho~ = (chi_mn + chi_nm) / (2 chi_diag)`` for this population."""
        cd = self.diag_total
        if cd == 0:
            raise ZeroDivisionError("diagonal psip total is zero")
        r, c = self.rows, self.cols
        vals = np.where(r == c, 1.0, 0.5) * self.counts / cd
        return DensityMatrix(self.L, r, c, vals, self.basis, Source.DMQMC)


def init_population(L: int, N_psip: int, basis=Basis.Z, seed: int = 0,
                    delta_beta: float = DEFAULT_DELTA_BETA, loop: int = 0) -> PsipPopulation:
    """Spread ``N_psip`` positive psips over the diagonal as evenly as possible."""
    if N_psip <= 0:
        raise ValueError(f"N_psip must be positive, got {N_psip}")
    D = 1 << L
    if N_psip < D:
        warnings.warn(f"N_psip={N_psip} < 2^L={D}: the initial identity is not fully represented",
                      RuntimeWarning, stacklevel=2)
    q, r = divmod(N_psip, D)
    counts = np.full(D, q, dtype=np.int64)
    if r:
        extra = _rng(seed, loop, _INIT_STREAM).choice(D, size=r, replace=False)
        counts[extra] += 1
    idx = np.arange(D, dtype=np.int64)
    keep = counts != 0
    return PsipPopulation(L, (idx * D + idx)[keep], counts[keep], float(delta_beta), int(seed),
                          Basis(basis), loop)


def max_stable_delta_beta(h0: ModelParams) -> float:
    return STABILITY_LIMIT / _terms(h0).max_row_sum()


def _annihilate(keys: np.ndarray, counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(keys, kind="stable")
    keys, counts = keys[order], counts[order]
    if len(keys) == 0:
        return keys, counts
    starts = np.flatnonzero(np.concatenate([[True], keys[1:] != keys[:-1]]))
    net = np.add.reduceat(counts, starts)
    keep = net != 0
    return keys[starts][keep], net[keep]


def step(pop: PsipPopulation, h0: ModelParams, ceiling: int | None = None,
         damping: float = DEFAULT_DAMPING) -> PsipPopulation:
    """Advance the population by one ``delta_beta``.

    Each psip on ``(i, j)`` spawns onto ``(i', j)`` and onto ``(i, j')`` with
    probability ``delta_beta/2 |H_{i'i}|`` each, then dies (or clones) with
    probability ``|p_d|``, ``p_d = delta_beta/2 (H_ii + H_jj - 2 S)``.
    Opposite-signed psips on the same element annihilate at the end.

    Above ``ceiling`` walkers the shift follows
    ``S -= damping / delta_beta * log(N_after / N_before)``. A uniform shift
    only rescales rho, so the normalized estimator is unaffected.
    """
    if h0.L != pop.L:
        raise ValueError("population and Hamiltonian disagree on L")
    terms = _terms(h0.with_basis(pop.basis))
    db = pop.delta_beta
    if db * terms.max_row_sum() >= STABILITY_LIMIT:
        raise ConfigError(
            f"delta_beta={db} violates the stability guard; "
            f"the maximal admissible value is {STABILITY_LIMIT / terms.max_row_sum():.6g}")
    if db == 0.0:
        return replace(pop, steps=pop.steps + 1)

    rng = _rng(pop.seed, pop.loop, _STEP_STREAM, pop.steps)
    D = pop.dim
    rows, cols = pop.rows, pop.cols
    n_abs = np.abs(pop.counts)
    sgn = np.sign(pop.counts)

    new_keys, new_counts = [], []
    for mask, c in zip(terms.masks, terms.coeffs):
        p = 0.5 * db * abs(c)
        child_sign = -sgn * (1 if c > 0 else -1)
        for left in (True, False):
            k = rng.binomial(n_abs, p)
            hit = np.flatnonzero(k)
            if len(hit) == 0:
                continue
            r = rows[hit] ^ mask if left else rows[hit]
            q = cols[hit] if left else cols[hit] ^ mask
            new_keys.append(np.minimum(r, q) * D + np.maximum(r, q))
            new_counts.append(child_sign[hit] * k[hit])

    p_d = 0.5 * db * (terms.diag[rows] + terms.diag[cols] - 2.0 * pop.shift)
    n_d = rng.binomial(n_abs, np.minimum(np.abs(p_d), 1.0))
    survivors = pop.counts - np.where(p_d > 0, sgn * n_d, -sgn * n_d)

    keys, counts = _annihilate(np.concatenate([pop.keys] + new_keys),
                               np.concatenate([survivors] + new_counts))
    shift = pop.shift
    if ceiling is not None:
        before, after = pop.total_psips, int(np.abs(counts).sum())
        if after > ceiling and before > 0 and after > 0:
            shift = shift - damping / db * np.log(after / before)
    return replace(pop, keys=keys, counts=counts, steps=pop.steps + 1, shift=float(shift))


def _n_steps(beta: float, delta_beta: float) -> int:
    if beta < 0:
        raise ConfigError(f"inverse temperature must be >= 0, got {beta}")
    if beta == 0:
        return 0
    if delta_beta <= 0:
        raise ConfigError("delta_beta must be positive for beta > 0")
    n = int(round(beta / delta_beta))
    if abs(n * delta_beta - beta) > 1e-9 * max(1.0, beta):
        raise ConfigError(f"beta={beta} is not an integer multiple of delta_beta={delta_beta}")
    return n


def run_loop(h0: ModelParams, beta: float, N_psip: int, delta_beta: float = DEFAULT_DELTA_BETA,
             seed: int = 0, loop: int = 0, ceiling: int | None = None,
             damping: float = DEFAULT_DAMPING) -> PsipPopulation:
    n = _n_steps(beta, delta_beta)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pop = init_population(h0.L, N_psip, h0.basis, seed, delta_beta, loop)
    for _ in range(n):
        pop = step(pop, h0, ceiling, damping)
        if len(pop.counts) == 0:
            break
    return pop


@dataclass
class SamplingStats:
    """Folded psip counts pooled over the kept loops.

    ``chi`` is the signed folded count summed over loops and ``N`` the sum
    over loops of its absolute value. ``chi_diag`` is the pooled diagonal
    total. Per ordered element, the counts entering the error formulas are
    ``chi/2`` and ``N/2`` off the diagonal (see ``element_counts``).
    """

    L: int
    basis: Basis
    beta: float
    N_psip: int
    N_loops: int
    delta_beta: float
    seed: int
    keys: np.ndarray
    chi: np.ndarray
    N: np.ndarray
    chi_diag: int
    loop_chi_diag: list = field(default_factory=list)
    discarded: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return 1 << self.L

    @property
    def rows(self) -> np.ndarray:
        return self.keys // self.dim

    @property
    def cols(self) -> np.ndarray:
        return self.keys % self.dim

    def element_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-ordered-element ``(chi, N)`` aligned with ``keys``."""
        half = np.where(self.rows == self.cols, 1.0, 0.5)
        return self.chi * half, self.N * half

    def header(self) -> dict:
        return {"L": self.L, "basis": self.basis.value, "beta": self.beta, "N_psip": self.N_psip,
                "N_loops": self.N_loops, "delta_beta": self.delta_beta, "seed": self.seed,
                "chi_diag": int(self.chi_diag)}


def _pool(pops: list[PsipPopulation]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    keys = np.concatenate([p.keys for p in pops])
    chi = np.concatenate([p.counts for p in pops])
    uniq, inv = np.unique(keys, return_inverse=True)
    inv = inv.ravel()
    chi_sum = np.zeros(len(uniq), dtype=np.int64)
    n_sum = np.zeros(len(uniq), dtype=np.int64)
    np.add.at(chi_sum, inv, chi)
    np.add.at(n_sum, inv, np.abs(chi))
    return uniq, chi_sum, n_sum


def sample(h0: ModelParams, beta: float, N_psip: int, N_loops: int = DEFAULT_LOOPS,
           delta_beta: float = DEFAULT_DELTA_BETA, seed: int = 0, workers: int = 1,
           ceiling: int | None = None, damping: float = DEFAULT_DAMPING) -> tuple[DensityMatrix, SamplingStats]:
    """Estimate the normalized thermal state from ``N_loops`` independent sweeps.

    Loop ``l`` draws from streams derived from ``(seed, l, step)``, so the
    result does not depend on ``workers``. The estimator is the ratio of the
    loop-pooled folded counts to the pooled diagonal total.
    """
    if N_loops < 1:
        raise ConfigError("N_loops must be >= 1")
    if N_psip <= 0:
        raise ValueError(f"N_psip must be positive, got {N_psip}")
    _n_steps(beta, delta_beta)
    if N_psip < h0.dim:
        warnings.warn(f"N_psip={N_psip} < 2^L={h0.dim}", RuntimeWarning, stacklevel=2)

    def work(loop):
        return run_loop(h0, beta, N_psip, delta_beta, seed, loop, ceiling, damping)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            pops = list(ex.map(work, range(N_loops)))
    else:
        pops = [work(l) for l in range(N_loops)]

    kept, discarded = [], []
    for p in pops:
        if p.diag_total == 0:
            warnings.warn(f"loop {p.loop}: chi_diag = 0 at beta={beta}; loop discarded",
                          RuntimeWarning, stacklevel=2)
            discarded.append(p.loop)
        else:
            kept.append(p)
    if not kept:
        raise SamplingError(f"all {N_loops} loops ended with chi_diag = 0")

    keys, chi, N = _pool(kept)
    D = h0.dim
    rows, cols = keys // D, keys % D
    chi_diag = int(chi[rows == cols].sum())
    if chi_diag == 0:
        raise SamplingError("pooled chi_diag is zero")
    stats = SamplingStats(h0.L, h0.basis, float(beta), int(N_psip), len(kept), float(delta_beta),
                          int(seed), keys, chi, N, chi_diag,
                          [p.diag_total for p in kept], discarded)
    nz = chi != 0
    vals = np.where(rows == cols, 1.0, 0.5) * chi / chi_diag
    rho = DensityMatrix(h0.L, rows[nz], cols[nz], vals[nz], h0.basis, Source.DMQMC)
    return rho, stats


def _index_keys(index_set, D: int) -> np.ndarray:
    if isinstance(index_set, DensityMatrix):
        return index_set.keys
    a, b = (np.asarray(x, dtype=np.int64) for x in
            (index_set if isinstance(index_set, tuple) else np.asarray(index_set).T))
    return np.unique(np.minimum(a, b) * D + np.maximum(a, b))


def element_error(stats: SamplingStats, index_set=None) -> dict:
    """Per-element statistical error of ``rho~^w`` restricted to ``index_set``.

    ``index_set`` is a DensityMatrix, an ``(m, n)`` array pair or ``None``
    (every sampled element). Keys of the returned map are ``(m, n)`` with
    ``m <= n``; the value also serves ``(n, m)``.
    """
    D = stats.dim
    W = stats.keys if index_set is None else _index_keys(index_set, D)
    chi_e, n_e = stats.element_counts()
    pos = np.clip(np.searchsorted(stats.keys, W), 0, len(stats.keys) - 1)
    found = stats.keys[pos] == W
    chi_w = np.where(found, chi_e[pos], 0.0)
    n_w = np.where(found, n_e[pos], 0.0)
    r, c = W // D, W % D
    diag = r == c
    chi_d, n_d = float(chi_w[diag].sum()), float(n_w[diag].sum())
    if chi_d == 0.0:
        raise ZeroDivisionError("chi_diag over the index set is zero; normalization undefined")
    base = n_w / chi_d ** 2
    quad = n_w * n_d / chi_d ** 2
    off_term = 1.0 + quad
    diag_term = 1.0 - 2.0 * chi_w / chi_d + quad
    inner = np.where(diag, diag_term, off_term)
    delta = np.sqrt(base * np.maximum(inner, 0.0))
    return {(int(m), int(n)): float(d) for m, n, d in zip(r, c, delta)}


def write_jsonl(stats: SamplingStats, path, errors: dict | None = None) -> None:
    errors = element_error(stats) if errors is None else errors
    chi_e, n_e = stats.element_counts()
    with open(path, "w") as fh:
        fh.write(json.dumps(stats.header()) + "\n")
        for m, n, chi, N in zip(stats.rows, stats.cols, chi_e, n_e):
            rec = {"m": int(m), "n": int(n), "chi": float(chi), "N": float(N),
                   "Delta": errors.get((int(m), int(n)), 0.0)}
            fh.write(json.dumps(rec) + "\n")


def read_jsonl(path) -> tuple[dict, list[dict]]:
    with open(path) as fh:
        header = json.loads(fh.readline())
        return header, [json.loads(line) for line in fh if line.strip()]
