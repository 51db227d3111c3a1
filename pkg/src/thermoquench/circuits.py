"""Superposition-state preparation circuits, matrix-element identities and the Hadamard test.

Qubit ``q`` is bit ``q`` of the basis index (site ``q + 1``). An ancilla, when
present, is the highest qubit.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError
from .model import MAX_L, BasisState, Observable, ObservableKind, observable_terms, stagger

MAX_QUBITS = MAX_L + 1

_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_S = np.diag([1, 1j])
_SDG = np.diag([1, -1j])
_SINGLE = {"H": _H, "X": _X, "S": _S, "SDG": _SDG}
_PAULI = {"I": np.eye(2), "X": _X.real, "Y": np.array([[0, -1j], [1j, 0]]), "Z": np.diag([1.0, -1.0])}


@dataclass(frozen=True)
class Gate:
    name: str
    qubits: tuple
    matrix: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __str__(self) -> str:
        return f"{self.name} {','.join(str(q) for q in self.qubits)}"


@dataclass
class Circuit:
    num_qubits: int
    layers: list = field(default_factory=list)

    @property
    def gates(self) -> list[Gate]:
        return [g for layer in self.layers for g in layer]

    def add_layer(self, gates) -> None:
        gates = list(gates)
        if not gates:
            return
        used = set()
        for g in gates:
            for q in g.qubits:
                if not 0 <= q < self.num_qubits:
                    raise ValueError(f"qubit {q} out of range for {self.num_qubits} qubits")
                if q in used:
                    raise ValueError(f"qubit {q} used twice in one layer")
                used.add(q)
        self.layers.append(gates)

    def cnot_layers(self) -> int:
        return sum(1 for layer in self.layers if any(g.name == "CNOT" for g in layer))

    def to_text(self) -> str:
        lines = []
        for i, layer in enumerate(self.layers):
            if i:
                lines.append("---")
            lines.extend(str(g) for g in layer)
        return "\n".join(lines) + "\n"


class Variant(str, enum.Enum):
    PSI_PLUS = "psi+"
    PSI_MINUS = "psi-"
    PHI_PLUS = "phi+"
    PHI_MINUS = "phi-"

    @property
    def minus(self) -> bool:
        return self in (Variant.PSI_MINUS, Variant.PHI_MINUS)

    @property
    def imaginary(self) -> bool:
        return self in (Variant.PHI_PLUS, Variant.PHI_MINUS)

    @property
    def phase(self) -> complex:
        """Coefficient of ``|m>`` relative to ``|n>``."""
        return (-1 if self.minus else 1) * (1j if self.imaginary else 1)


@dataclass(frozen=True)
class SuperpositionSpec:
    n: BasisState
    m: BasisState
    variant: Variant = Variant.PSI_PLUS

    def __post_init__(self):
        if self.n.L != self.m.L:
            raise ValueError("n and m must have the same length")
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def L(self) -> int:
        return self.n.L

    def target(self) -> np.ndarray:
        out = np.zeros(1 << self.L, dtype=complex)
        out[self.n.bits] += 1 / math.sqrt(2)
        out[self.m.bits] += self.variant.phase / math.sqrt(2)
        return out


def synthesize(spec: SuperpositionSpec) -> Circuit:
    """Circuit preparing ``(|n> + c|m>)/sqrt(2)`` from ``|0...0>``.

    The pivot is the lowest differing bit. It gets ``X^minus H S^phi`` and
    an X when ``n`` has a 1 there; CNOTs then fan its value out over the
    differing bits in a doubling tree. Tree nodes act as controls, so the
    X gates writing the remaining bit pattern (that of whichever state has
    a 0 on the pivot) come last.
    """
    n, m = spec.n.bits, spec.m.bits
    if n == m:
        raise ValueError("n == m: a superposition needs two distinct basis states")
    L = spec.L
    diff = n ^ m
    support = [q for q in range(L) if diff >> q & 1]
    pivot = support[0]
    n_p = n >> pivot & 1
    zero_branch = m if n_p else n

    c = Circuit(L)
    if spec.variant.minus:
        c.add_layer([Gate("X", (pivot,))])
    c.add_layer([Gate("H", (pivot,))])
    if spec.variant.imaginary:
        c.add_layer([Gate("S", (pivot,))])
    if n_p:
        c.add_layer([Gate("X", (pivot,))])
    holders, rest = [pivot], support[1:]
    while rest:
        targets, rest = rest[:len(holders)], rest[len(holders):]
        c.add_layer([Gate("CNOT", (h, t)) for h, t in zip(holders, targets)])
        holders = holders + targets
    c.add_layer([Gate("X", (q,)) for q in range(L) if q != pivot and zero_branch >> q & 1])
    return c


def _apply_single(psi: np.ndarray, U: np.ndarray, q: int, n: int) -> np.ndarray:
    v = psi.reshape(1 << (n - 1 - q), 2, 1 << q)
    return np.einsum("ab,ibj->iaj", U, v).reshape(-1)


def simulate(c: Circuit, initial=0) -> np.ndarray:
    """Statevector after all layers; ``initial`` is a basis index or a full statevector."""
    n = c.num_qubits
    if n > MAX_QUBITS:
        raise CapacityError(f"statevector simulation refused for {n} > {MAX_QUBITS} qubits")
    if np.ndim(initial) == 0:
        psi = np.zeros(1 << n, dtype=complex)
        psi[int(initial)] = 1.0
    else:
        psi = np.array(initial, dtype=complex)
        if psi.shape != (1 << n,):
            raise ValueError(f"initial state must have length 2^{n}")
    idx = np.arange(1 << n)
    for layer in c.layers:
        for g in layer:
            if g.name in _SINGLE:
                psi = _apply_single(psi, _SINGLE[g.name], g.qubits[0], n)
            elif g.name == "CNOT":
                ctl, tgt = g.qubits
                psi = psi[np.where(idx >> ctl & 1, idx ^ (1 << tgt), idx)]
            elif g.name == "CU":
                ctl, targets = g.qubits[0], g.qubits[1:]
                if ctl != n - 1 or list(targets) != list(range(n - 1)):
                    raise ValueError("controlled unitaries must be controlled by the top qubit on all others")
                half = 1 << (n - 1)
                psi = np.concatenate([psi[:half], g.matrix @ psi[half:]])
            else:
                raise ValueError(f"unknown gate {g.name}")
    return psi


def matrix_element_from_expectations(e_psi_plus, e_psi_minus, e_phi_plus, e_phi_minus) -> np.ndarray:
    """``O_nm`` from the four superposition-state expectation values."""
    series = [np.asarray(getattr(s, "values", s), dtype=float)
              for s in (e_psi_plus, e_psi_minus, e_phi_plus, e_phi_minus)]
    if len({s.shape for s in series}) != 1:
        raise ValueError("the four expectation series must share one time grid")
    pp, pm, fp, fm = series
    return 0.5 * (pp - pm) + 0.5j * (fm - fp)


def _check_unitary(u: np.ndarray) -> None:
    dev = np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0]))
    if dev > 1e-10:
        raise ValueError(f"matrix is not unitary (||U^dag U - 1|| = {dev:.2e})")


def hadamard_test_circuit(u: np.ndarray, a: int) -> Circuit:
    L = int(round(math.log2(u.shape[0])))
    c = Circuit(L + 1)
    c.add_layer([Gate("H", (L,))])
    c.add_layer([Gate("CU", (L,) + tuple(range(L)), np.asarray(u, dtype=complex))])
    if a:
        # S^dagger makes the ancilla read +Im<psi|U|psi>
        c.add_layer([Gate("SDG", (L,))])
    c.add_layer([Gate("H", (L,))])
    return c


def hadamard_test(u: np.ndarray, psi: np.ndarray, a: int) -> float:
    """Exact ancilla ``<Z>``: ``Re<psi|U|psi>`` for ``a = 0``, ``Im<psi|U|psi>`` for ``a = 1``."""
    u = np.asarray(u, dtype=complex)
    _check_unitary(u)
    if a not in (0, 1):
        raise ValueError("a must be 0 or 1")
    psi = np.asarray(psi, dtype=complex)
    L = int(round(math.log2(len(psi))))
    c = hadamard_test_circuit(u, a)
    full = np.zeros(1 << (L + 1), dtype=complex)
    full[:1 << L] = psi
    state = simulate(c, full)
    p0 = float(np.sum(np.abs(state[:1 << L]) ** 2))
    return 2 * p0 - 1


def pauli_decompose(obs: Observable) -> list[tuple[float, str]]:
    """``(coefficient, Pauli string)`` terms; strings list site 1 first."""
    L = obs.L
    if obs.kind is ObservableKind.STAGGERED_Z:
        letter, coeffs = "Z", stagger(L) / L
    elif obs.kind is ObservableKind.MAGNETIZATION_X:
        letter, coeffs = "X", np.full(L, 1.0 / L)
    else:
        raise ValueError(f"no Pauli decomposition registered for {obs.kind}")
    return [(float(c), "I" * i + letter + "I" * (L - 1 - i)) for i, c in enumerate(coeffs)]


def pauli_matrix(string: str) -> np.ndarray:
    """Dense z-basis matrix of a Pauli string (site 1 first, i.e. least significant bit)."""
    out = np.ones((1, 1))
    for ch in string:
        out = np.kron(_PAULI[ch], out)
    return out


def flip_matrix(support_mask: int, L: int) -> np.ndarray:
    """Permutation matrix of ``prod_{j in support} X_j``."""
    D = 1 << L
    out = np.zeros((D, D))
    out[np.arange(D) ^ support_mask, np.arange(D)] = 1.0
    return out


def observable_matrix(obs: Observable) -> np.ndarray:
    return observable_terms(obs, "z").to_dense()
