"""Spin-flip / reflection / translation symmetries and simulation orbit plans.

A group element ``S^s R^a T_1^b`` acts on a basis state by translating the
sites by ``b`` (site i -> i+b, cyclic), then reflecting (site i -> L-i+1)
when ``a = 1``, then complementing every bit when ``s = 1``. Products are
rewritten into this normal form with ``T R = R T^{-1}``.
"""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass

import numpy as np

from .containers import DensityMatrix
from .errors import ConfigError
from .model import Basis, BasisState, ModelParams, Observable, ObservableKind


@dataclass(frozen=True)
class SymmetryElement:
    spin_flip: int = 0
    reflection: int = 0
    translation: int = 0

    def __post_init__(self):
        if self.spin_flip not in (0, 1) or self.reflection not in (0, 1) or self.translation < 0:
            raise ValueError(f"invalid symmetry element {self}")

    def normalized(self, L: int) -> "SymmetryElement":
        return SymmetryElement(self.spin_flip, self.reflection, self.translation % L)

    def compose(self, other: "SymmetryElement", L: int) -> "SymmetryElement":
        """The element ``self * other`` (``other`` acts first)."""
        b1 = -self.translation if other.reflection else self.translation
        return SymmetryElement((self.spin_flip + other.spin_flip) % 2,
                               (self.reflection + other.reflection) % 2,
                               (b1 + other.translation) % L)

    def permutation(self, L: int) -> np.ndarray:
        return _permutation(self.spin_flip, self.reflection, self.translation % L, L)

    @property
    def parity(self) -> int:
        return (self.spin_flip + self.reflection + self.translation) % 2


def _translate(idx: np.ndarray, b: int, L: int) -> np.ndarray:
    if b == 0:
        return idx
    full = (1 << L) - 1
    return ((idx << b) | (idx >> (L - b))) & full


def _reflect(idx: np.ndarray, L: int) -> np.ndarray:
    out = np.zeros_like(idx)
    for k in range(L):
        out |= ((idx >> k) & 1) << (L - 1 - k)
    return out


@functools.lru_cache(maxsize=256)
def _permutation(s: int, a: int, b: int, L: int) -> np.ndarray:
    idx = _translate(np.arange(1 << L, dtype=np.int64), b, L)
    if a:
        idx = _reflect(idx, L)
    if s:
        idx = idx ^ ((1 << L) - 1)
    idx.flags.writeable = False
    return idx


def apply_element(g: SymmetryElement, state: BasisState) -> BasisState:
    idx = np.array([state.bits], dtype=np.int64)
    idx = _translate(idx, g.translation % state.L, state.L)
    if g.reflection:
        idx = _reflect(idx, state.L)
    if g.spin_flip:
        idx = idx ^ ((1 << state.L) - 1)
    return BasisState(int(idx[0]), state.L, state.basis)


def h1_group(L: int) -> list[SymmetryElement]:
    """``R^a T_1^b``: the symmetries of a quench Hamiltonian without staggered field."""
    return [SymmetryElement(0, a, b) for a in (0, 1) for b in range(L)]


def h0_group(h0: ModelParams) -> list[SymmetryElement]:
    """All ``S^s R^a T_1^b`` commuting with ``h0``.

    ``S`` flips the uniform field; ``S``, ``R`` and ``T_1`` each flip the
    staggered field. With both fields present this is the ``R^a T^b`` subset
    of even parity, which contains ``T_2``; with ``h0 = 0`` the combinations
    ``S T_1``, ``R T_1`` and ``S R`` join.
    """
    out = []
    for s in (0, 1):
        for a in (0, 1):
            for b in range(h0.L):
                g = SymmetryElement(s, a, b)
                if s and h0.h != 0:
                    continue
                if g.parity and h0.h_s != 0:
                    continue
                out.append(g)
    return out


def sign_of(g: SymmetryElement, obs: Observable) -> int:
    """Factor picked up by ``<gn|O(t)|gm>`` relative to ``<n|O(t)|m>``."""
    if g.spin_flip:
        raise ValueError("spin flip is not a symmetry of the quench Hamiltonian")
    if obs.kind is ObservableKind.STAGGERED_Z:
        return -1 if (g.reflection + g.translation) % 2 else 1
    if obs.kind is ObservableKind.MAGNETIZATION_X:
        return 1
    raise ValueError(f"no transformation rule registered for {obs.kind}")


def _parity(idx: np.ndarray) -> np.ndarray:
    out = np.zeros_like(idx)
    x = idx.copy()
    while np.any(x):
        out ^= x & 1
        x >>= 1
    return out


def symmetrize_rho(rho: DensityMatrix, h0: ModelParams, chunk: int = 8) -> DensityMatrix:
    """Replace every entry by its average over the symmetry group of ``h0``.

    In the x-basis ``T_1`` and ``R`` still permute basis states while the
    spin flip is diagonal, contributing the sign ``(-1)^{|m| + |n|}``.
    """
    if h0.L != rho.L:
        raise ValueError("rho and h0 disagree on L")
    group = h0_group(h0)
    D = rho.dim
    x_basis = rho.basis is Basis.X
    sign_rc = 1 - 2 * (_parity(rho.rows) ^ _parity(rho.cols)) if x_basis else None
    keys = np.empty(0, dtype=np.int64)
    vals = np.empty(0)
    for start in range(0, len(group), chunk):
        ks, vs = [keys], [vals]
        for g in group[start:start + chunk]:
            if x_basis:
                p = _permutation(0, g.reflection, g.translation % rho.L, rho.L)
                v = rho.values * sign_rc if g.spin_flip else rho.values
            else:
                p = g.permutation(rho.L)
                v = rho.values
            r, c = p[rho.rows], p[rho.cols]
            ks.append(np.minimum(r, c) * D + np.maximum(r, c))
            vs.append(v)
        keys, inv = np.unique(np.concatenate(ks), return_inverse=True)
        vals = np.bincount(inv.ravel(), weights=np.concatenate(vs), minlength=len(keys))
    vals = vals / len(group)
    keep = vals != 0.0
    return DensityMatrix(rho.L, keys[keep] // D, keys[keep] % D, vals[keep], rho.basis, rho.source)


@dataclass
class OrbitPlan:
    """Partition of retained pairs ``(n, m)`` into orbits of the quench symmetry group.

    For every retained, non-excluded pair ``p``:
    ``O_p(t) = sign[p] * (conj if conj[p]) O_rep(t)``, ``rep = representatives[rep_index[p]]``.
    """

    L: int
    observable: Observable
    representatives: np.ndarray
    pairs: np.ndarray
    rep_index: np.ndarray
    sign: np.ndarray
    conj: np.ndarray
    excluded: np.ndarray

    @property
    def N_sim(self) -> int:
        return len(self.representatives)

    @property
    def N_pairs(self) -> int:
        return len(self.pairs) + len(self.excluded)

    def to_json(self) -> dict:
        reps = self.representatives.tolist()
        return {
            "observable": self.observable.kind.value,
            "L": self.L,
            "N_sim": self.N_sim,
            "representatives": reps,
            "expansion": [{"pair": [int(a), int(b)], "rep": reps[int(r)], "sign": int(s), "conj": bool(c)}
                          for (a, b), r, s, c in zip(self.pairs, self.rep_index, self.sign, self.conj)],
            "excluded": self.excluded.tolist(),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def from_json(cls, data: dict) -> "OrbitPlan":
        reps = np.array(data["representatives"], dtype=np.int64).reshape(-1, 2)
        lookup = {tuple(r): i for i, r in enumerate(reps.tolist())}
        exp = data["expansion"]
        return cls(
            L=data["L"],
            observable=Observable(data["observable"], data["L"]),
            representatives=reps,
            pairs=np.array([e["pair"] for e in exp], dtype=np.int64).reshape(-1, 2),
            rep_index=np.array([lookup[tuple(e["rep"])] for e in exp], dtype=np.int64),
            sign=np.array([e["sign"] for e in exp], dtype=np.int8),
            conj=np.array([e.get("conj", False) for e in exp], dtype=bool),
            excluded=np.array(data["excluded"], dtype=np.int64).reshape(-1, 2),
        )


def plan_simulations(index_set, obs: Observable, h1: ModelParams) -> OrbitPlan:
    """Group the retained ordered pairs into symmetry orbits; drop pairs forced to zero.

    ``index_set`` is ``(n, m)`` as two integer arrays (or an ``(P, 2)`` array).
    A pair is excluded when some group element fixes both states and flips the
    sign of the observable.
    """
    if h1.h_s != 0:
        raise ConfigError("orbit planning assumes a quench Hamiltonian without staggered field")
    if obs.L != h1.L:
        raise ValueError("observable and quench disagree on L")
    n, m = (np.asarray(x, dtype=np.int64) for x in
            (index_set if isinstance(index_set, tuple) else np.asarray(index_set).T))
    L, D = h1.L, h1.dim
    keys = np.unique(n * D + m)
    n, m = keys // D, keys % D
    group = h1_group(L)
    signs = np.array([sign_of(g, obs) for g in group], dtype=np.int8)

    excluded = np.zeros(len(keys), dtype=bool)
    for g, s in zip(group, signs):
        if s < 0:
            p = g.permutation(L)
            excluded |= (p[n] == n) & (p[m] == m)

    n_k, m_k = n[~excluded], m[~excluded]
    canon = np.full(len(n_k), np.iinfo(np.int64).max)
    c_sign = np.ones(len(n_k), dtype=np.int8)
    c_conj = np.zeros(len(n_k), dtype=bool)
    for g, s in zip(group, signs):
        p = g.permutation(L)
        gn, gm = p[n_k], p[m_k]
        for key, fold in ((gn * D + gm, False), (gm * D + gn, True)):
            better = key < canon
            canon[better] = key[better]
            c_sign[better] = s
            c_conj[better] = fold

    # orbit label = canonical key; representative = smallest retained key in the orbit
    labels, inv = np.unique(canon, return_inverse=True)
    inv = inv.ravel()
    kept_keys = keys[~excluded]
    first = np.full(len(labels), len(kept_keys), dtype=np.int64)
    np.minimum.at(first, inv, np.arange(len(kept_keys)))  # keys are sorted, so min index = min key
    rep_order = np.argsort(kept_keys[first], kind="stable")
    rank = np.empty_like(rep_order)
    rank[rep_order] = np.arange(len(rep_order))
    rep_pos = first[inv]
    return OrbitPlan(
        L=L,
        observable=obs,
        representatives=np.column_stack([n_k[first[rep_order]], m_k[first[rep_order]]]),
        pairs=np.column_stack([n_k, m_k]),
        rep_index=rank[inv],
        sign=(c_sign * c_sign[rep_pos]).astype(np.int8),
        conj=c_conj ^ c_conj[rep_pos],
        excluded=np.column_stack([n[excluded], m[excluded]]),
    )
