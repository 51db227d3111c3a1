"""Mixed-field Ising chain: basis encoding, Hamiltonian, order parameters.

Conventions used everywhere in the package:

* site ``i`` (1-based) is stored in bit ``i - 1`` of the basis index;
* bit value ``b`` is the local eigenvalue ``1 - 2b`` of ``Z_i`` (z-basis) or
  ``X_i`` (x-basis);
* ket strings such as ``"0101"`` list site 1 first, so ``"0101"`` is the
  Neel state with index ``0b1010``.

The Hamiltonian (periodic boundaries, ``J > 0`` antiferromagnetic) is::

    H = sum_i [ J Z_i Z_{i+1} + g X_i + h Z_i + h_s (-1)^i Z_i ]

For ``L = 2`` the sum visits the single bond twice; that literal reading is
kept.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, ConfigError

MAX_L = 20
MAX_DENSE_L = 12


class Basis(str, enum.Enum):
    Z = "z"
    X = "x"


@dataclass(frozen=True)
class ModelParams:
    L: int
    g: float = 0.0
    h: float = 0.0
    h_s: float = 0.0
    J: float = 1.0
    basis: Basis = Basis.Z

    def __post_init__(self):
        if not isinstance(self.L, (int, np.integer)) or self.L % 2 or not 2 <= self.L <= MAX_L:
            raise ConfigError(f"L must be an even integer in [2, {MAX_L}], got {self.L!r}")
        if not self.J > 0:
            raise ConfigError(f"J must be positive (antiferromagnetic), got {self.J}")
        object.__setattr__(self, "L", int(self.L))
        object.__setattr__(self, "basis", Basis(self.basis))

    @property
    def dim(self) -> int:
        return 1 << self.L

    def with_basis(self, basis) -> "ModelParams":
        return replace(self, basis=Basis(basis))

    def as_dict(self) -> dict:
        return {"L": self.L, "J": self.J, "g": self.g, "h": self.h,
                "h_s": self.h_s, "basis": self.basis.value}


@dataclass(frozen=True)
class BasisState:
    bits: int
    L: int
    basis: Basis = Basis.Z

    def __post_init__(self):
        if not 0 <= self.bits < (1 << self.L):
            raise ValueError(f"bits {self.bits} out of range for L={self.L}")
        object.__setattr__(self, "basis", Basis(self.basis))

    @classmethod
    def from_string(cls, ket: str, basis=Basis.Z) -> "BasisState":
        """Parse a ket string listing site 1 first, e.g. ``"0101"``."""
        ket = ket.strip("|⟩> ")
        if not ket or set(ket) - {"0", "1"}:
            raise ValueError(f"not a bit string: {ket!r}")
        bits = sum(1 << i for i, c in enumerate(ket) if c == "1")
        return cls(bits, len(ket), basis)

    def __str__(self) -> str:
        return "".join(str((self.bits >> i) & 1) for i in range(self.L))

    def eigenvalues(self) -> np.ndarray:
        return site_eigenvalues(self.bits, self.L)


class ObservableKind(str, enum.Enum):
    STAGGERED_Z = "mz_pi"
    MAGNETIZATION_X = "mx"


@dataclass(frozen=True)
class Observable:
    kind: ObservableKind
    L: int

    def __post_init__(self):
        object.__setattr__(self, "kind", ObservableKind(self.kind))

    @property
    def diagonal_basis(self) -> Basis:
        return Basis.Z if self.kind is ObservableKind.STAGGERED_Z else Basis.X

    @classmethod
    def staggered_z(cls, L: int) -> "Observable":
        return cls(ObservableKind.STAGGERED_Z, L)

    @classmethod
    def magnetization_x(cls, L: int) -> "Observable":
        return cls(ObservableKind.MAGNETIZATION_X, L)


def site_eigenvalues(index, L: int) -> np.ndarray:
    """Local eigenvalues ``1 - 2*bit`` for every site; shape ``index.shape + (L,)``."""
    index = np.asarray(index, dtype=np.int64)
    bits = (index[..., None] >> np.arange(L)) & 1
    return (1 - 2 * bits).astype(np.int8)


def stagger(L: int) -> np.ndarray:
    """The factors ``(-1)^i`` for sites ``i = 1..L``."""
    return np.array([(-1) ** i for i in range(1, L + 1)], dtype=np.int64)


@dataclass(frozen=True)
class PauliTerms:
    """Real operator ``diag(d) + sum_k c_k X^{mask_k}`` on ``L`` qubits.

    Every operator in this package has constant-coefficient off-diagonal
    parts in both bases, so this representation is exact for all of them.
    """

    L: int
    diag: np.ndarray
    masks: np.ndarray
    coeffs: np.ndarray
    _index: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", np.arange(1 << self.L, dtype=np.int64))

    @property
    def dim(self) -> int:
        return 1 << self.L

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        if v.shape[0] != self.dim:
            raise ValueError(f"vector length {v.shape[0]} != 2^L = {self.dim}")
        d = self.diag if v.ndim == 1 else self.diag.reshape((-1,) + (1,) * (v.ndim - 1))
        out = d * v
        for mask, c in zip(self.masks, self.coeffs):
            out = out + c * v[self._index ^ mask]
        return out

    def max_row_sum(self) -> float:
        """Upper bound on the absolute row sum (exact, since coefficients are constant)."""
        return float(np.max(np.abs(self.diag), initial=0.0) + np.sum(np.abs(self.coeffs)))

    def to_sparse(self) -> sp.csr_matrix:
        D = self.dim
        rows = [self._index]
        cols = [self._index]
        data = [self.diag.astype(float)]
        for mask, c in zip(self.masks, self.coeffs):
            rows.append(self._index)
            cols.append(self._index ^ mask)
            data.append(np.full(D, c, dtype=float))
        m = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(D, D))
        return m.tocsr()

    def to_dense(self, max_L: int = MAX_DENSE_L) -> np.ndarray:
        if self.L > max_L:
            raise CapacityError(f"dense materialization refused for L={self.L} > {max_L}")
        out = np.diag(self.diag.astype(float))
        for mask, c in zip(self.masks, self.coeffs):
            out[self._index ^ mask, self._index] += c
        return out


def _collect(L, diag, offdiag: dict) -> PauliTerms:
    items = [(m, c) for m, c in sorted(offdiag.items()) if c != 0.0]
    masks = np.array([m for m, _ in items], dtype=np.int64)
    coeffs = np.array([c for _, c in items], dtype=float)
    return PauliTerms(L, np.asarray(diag, dtype=float), masks, coeffs)


def hamiltonian_terms(params: ModelParams) -> PauliTerms:
    L = params.L
    e = site_eigenvalues(np.arange(params.dim), L).astype(float)
    local = params.h + params.h_s * stagger(L)
    offdiag: dict[int, float] = {}
    if params.basis is Basis.Z:
        diag = params.J * np.sum(e * np.roll(e, -1, axis=1), axis=1) + e @ local
        for k in range(L):
            offdiag[1 << k] = offdiag.get(1 << k, 0.0) + params.g
    else:
        # Hadamard conjugation: Z <-> X on every site
        diag = params.g * e.sum(axis=1)
        for k in range(L):
            bond = (1 << k) | (1 << ((k + 1) % L))
            offdiag[bond] = offdiag.get(bond, 0.0) + params.J
            offdiag[1 << k] = offdiag.get(1 << k, 0.0) + float(local[k])
    return _collect(L, diag, offdiag)


def apply_hamiltonian(params: ModelParams, v: np.ndarray) -> np.ndarray:
    """Matrix-free ``H v`` in ``params.basis``."""
    v = np.asarray(v)
    if v.shape[0] != params.dim:
        raise ValueError(f"vector length {v.shape[0]} != 2^L = {params.dim}")
    return hamiltonian_terms(params).apply(v)


def hamiltonian_matrix(params: ModelParams, sparse: bool = False, max_dense_L: int = MAX_DENSE_L):
    terms = hamiltonian_terms(params)
    return terms.to_sparse() if sparse else terms.to_dense(max_dense_L)


def observable_diagonal(obs: Observable) -> np.ndarray:
    """Diagonal of the observable in its own eigenbasis (``obs.diagonal_basis``)."""
    e = site_eigenvalues(np.arange(1 << obs.L), obs.L).astype(np.int64)
    if obs.kind is ObservableKind.STAGGERED_Z:
        return (e @ stagger(obs.L)) / obs.L
    return e.sum(axis=1) / obs.L


def observable_terms(obs: Observable, basis) -> PauliTerms:
    basis = Basis(basis)
    if basis is obs.diagonal_basis:
        return _collect(obs.L, observable_diagonal(obs), {})
    factors = stagger(obs.L) if obs.kind is ObservableKind.STAGGERED_Z else np.ones(obs.L)
    return _collect(obs.L, np.zeros(1 << obs.L),
                    {1 << k: float(factors[k]) / obs.L for k in range(obs.L)})


def observable_value(obs: Observable, state: BasisState) -> float:
    if state.L != obs.L:
        raise ValueError("observable and state disagree on L")
    if state.basis is not obs.diagonal_basis:
        raise ValueError(
            f"{obs.kind.value} is not diagonal in the {state.basis.value}-basis; "
            "use matrix elements instead")
    e = state.eigenvalues().astype(np.int64)
    if obs.kind is ObservableKind.STAGGERED_Z:
        return float(e @ stagger(obs.L)) / obs.L
    return float(e.sum()) / obs.L


def rotate_basis(v: np.ndarray, L: int) -> np.ndarray:
    """Apply the L-fold tensor product of Hadamards along axis 0 (fast transform)."""
    v = np.asarray(v)
    if v.shape[0] != 1 << L:
        raise ValueError(f"leading dimension {v.shape[0]} != 2^L = {1 << L}")
    shape = v.shape
    x = v.reshape(1 << L, -1)
    for k in range(L):
        x = x.reshape(1 << (L - 1 - k), 2, 1 << k, -1)
        a, b = x[:, 0], x[:, 1]
        x = np.stack((a + b, a - b), axis=1)
    return x.reshape(shape) / 2.0 ** (L / 2)
