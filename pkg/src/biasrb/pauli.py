"""Pauli strings, Liouville superoperators and chi-matrix diagnostics.

Conventions used throughout the package:

* Qubit 0 is the leftmost tensor factor, so a computational basis index is
  ``x = sum_i x_i 2**(n-1-i)``. Bit-vectors ``alpha``/``beta`` are packed into
  integers with the same ordering.
* The Pauli basis is indexed by ``k = a * 2**n + b`` where ``a`` packs the X
  exponents and ``b`` the Z exponents. The Hermitian Pauli at index ``k`` is
  ``i**|a & b| X(a) Z(b)``. With this ordering the Z group occupies the first
  ``2**n`` indices.
* ``Basis.PAULI`` is the normalized Pauli basis ``P_k / sqrt(2**n)`` (the Pauli
  transfer matrix). ``Basis.COLUMN`` is column-stacking vectorization, where
  ``vec(K rho K^dag) = (conj(K) kron K) vec(rho)``.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Trace-preservation / probability-sum tolerance.
TP_ATOL = 1e-10
#: Unitarity and basis round-trip tolerance.
UNITARY_ATOL = 1e-12
#: Largest qubit count for dense superoperators (4**3 x 4**3 matrices).
MAX_QUBITS = 3

_SIGNS = (1, 1j, -1, -1j)


def _popcount(x: int) -> int:
    return bin(x).count("1")


def pack_bits(bits: Sequence[int]) -> int:
    """Pack a bit-vector (qubit 0 first) into an integer."""
    out = 0
    for bit in bits:
        out = (out << 1) | (int(bit) & 1)
    return out


def unpack_bits(value: int, n_qubits: int) -> tuple[int, ...]:
    return tuple((value >> (n_qubits - 1 - i)) & 1 for i in range(n_qubits))


def pauli_index(alpha: int, beta: int, n_qubits: int) -> int:
    return (alpha << n_qubits) | beta


def pauli_label(index: int, n_qubits: int) -> str:
    """Return e.g. ``'XZ'`` for the Hermitian Pauli at ``index``."""
    a, b = index >> n_qubits, index & ((1 << n_qubits) - 1)
    chars = []
    for i in range(n_qubits):
        shift = n_qubits - 1 - i
        chars.append("IZXY"[((a >> shift) & 1) * 2 + ((b >> shift) & 1)])
    return "".join(chars)


def index_from_label(label: str) -> int:
    """Inverse of :func:`pauli_label`; ``'1'`` is accepted for identity."""
    a = b = 0
    for ch in label.upper():
        x, z = {"I": (0, 0), "1": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}[ch]
        a = (a << 1) | x
        b = (b << 1) | z
    return pauli_index(a, b, len(label))


def _xz_matrix(alpha: int, beta: int, n_qubits: int) -> np.ndarray:
    """Dense ``X(alpha) Z(beta)`` (no phase)."""
    dim = 1 << n_qubits
    out = np.zeros((dim, dim), dtype=complex)
    for x in range(dim):
        out[x ^ alpha, x] = -1.0 if _popcount(beta & x) & 1 else 1.0
    return out


@dataclass(frozen=True)
class PauliOperator:
    """A signed Pauli string ``sign * X(alpha) Z(beta)``."""

    n_qubits: int
    alpha: tuple[int, ...]
    beta: tuple[int, ...]
    sign: complex = 1

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        if len(self.alpha) != self.n_qubits or len(self.beta) != self.n_qubits:
            raise ValueError("alpha and beta must have n_qubits entries")
        if self.sign not in _SIGNS:
            raise ValueError(f"sign must be one of +-1, +-i, got {self.sign}")
        object.__setattr__(self, "alpha", tuple(int(v) & 1 for v in self.alpha))
        object.__setattr__(self, "beta", tuple(int(v) & 1 for v in self.beta))

    @classmethod
    def from_ints(cls, alpha: int, beta: int, n_qubits: int, sign: complex = 1) -> "PauliOperator":
        return cls(n_qubits, unpack_bits(alpha, n_qubits), unpack_bits(beta, n_qubits), sign)

    @classmethod
    def from_label(cls, label: str) -> "PauliOperator":
        """Build the Hermitian Pauli named by ``label`` (e.g. ``'YZ'``)."""
        n = len(label)
        k = index_from_label(label)
        a, b = k >> n, k & ((1 << n) - 1)
        return cls.from_ints(a, b, n, _SIGNS[_popcount(a & b) % 4])

    @property
    def a(self) -> int:
        return pack_bits(self.alpha)

    @property
    def b(self) -> int:
        return pack_bits(self.beta)

    @property
    def index(self) -> int:
        return pauli_index(self.a, self.b, self.n_qubits)

    def __mul__(self, other: "PauliOperator") -> "PauliOperator":
        if self.n_qubits != other.n_qubits:
            raise ValueError("qubit count mismatch")
        # Z(b1) X(a2) = (-1)^{b1.a2} X(a2) Z(b1)
        flip = -1 if _popcount(self.b & other.a) & 1 else 1
        sign = self.sign * other.sign * flip
        sign = _SIGNS[min(range(4), key=lambda i: abs(_SIGNS[i] - sign))]
        return PauliOperator.from_ints(self.a ^ other.a, self.b ^ other.b, self.n_qubits, sign)

    def commutes(self, other: "PauliOperator") -> bool:
        return (_popcount(self.a & other.b) + _popcount(self.b & other.a)) % 2 == 0


@dataclass(frozen=True)
class DenseUnitary:
    n_qubits: int
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        dim = 1 << self.n_qubits
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (dim, dim):
            raise ValueError(f"expected {dim}x{dim} matrix, got {m.shape}")
        err = np.max(np.abs(m.conj().T @ m - np.eye(dim)))
        if err > UNITARY_ATOL:
            raise ValueError(f"matrix is not unitary (max |U^dag U - 1| = {err:.3e})")
        object.__setattr__(self, "matrix", m)

    def __matmul__(self, other: "DenseUnitary") -> "DenseUnitary":
        return DenseUnitary(self.n_qubits, self.matrix @ other.matrix)


def pauli_to_matrix(p: PauliOperator) -> DenseUnitary:
    return DenseUnitary(p.n_qubits, p.sign * _xz_matrix(p.a, p.b, p.n_qubits))


@functools.lru_cache(maxsize=None)
def pauli_basis(n_qubits: int) -> np.ndarray:
    """Stack of the ``4**n`` Hermitian Paulis in package index order."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ValueError(f"dense superoperators support 1..{MAX_QUBITS} qubits")
    dim = 1 << n_qubits
    mats = np.empty((dim * dim, dim, dim), dtype=complex)
    for a in range(dim):
        for b in range(dim):
            mats[pauli_index(a, b, n_qubits)] = _SIGNS[_popcount(a & b) % 4] * _xz_matrix(a, b, n_qubits)
    mats.setflags(write=False)
    return mats


@functools.lru_cache(maxsize=None)
def _col_to_pauli(n_qubits: int) -> np.ndarray:
    # columns are vec_col(P_k) / sqrt(d); unitary
    dim = 1 << n_qubits
    paulis = pauli_basis(n_qubits)
    basis = np.stack([p.reshape(-1, order="F") for p in paulis], axis=1) / math.sqrt(dim)
    basis.setflags(write=False)
    return basis


class Basis(enum.Enum):
    COLUMN = "column"
    PAULI = "pauli"


@dataclass(frozen=True)
class Superoperator:
    """A linear map on ``n_qubits``-qubit operators in a chosen basis."""

    n_qubits: int
    basis: Basis
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        size = 4**self.n_qubits
        m = np.asarray(self.matrix)
        if m.shape != (size, size):
            raise ValueError(f"expected {size}x{size} matrix, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    def to_basis(self, basis: Basis) -> "Superoperator":
        if basis is self.basis:
            return self
        B = _col_to_pauli(self.n_qubits)
        if basis is Basis.PAULI:
            m = B.conj().T @ self.matrix @ B
        else:
            m = B @ self.matrix @ B.conj().T
        return Superoperator(self.n_qubits, basis, m)

    def ptm(self) -> np.ndarray:
        """Pauli transfer matrix; real for Hermiticity-preserving maps."""
        m = self.to_basis(Basis.PAULI).matrix
        if np.iscomplexobj(m) and np.max(np.abs(m.imag)) < 1e-12:
            m = m.real
        return m

    def is_trace_preserving(self, atol: float = UNITARY_ATOL) -> bool:
        row = self.to_basis(Basis.PAULI).matrix[0]
        target = np.zeros_like(row)
        target[0] = 1
        return bool(np.max(np.abs(row - target)) <= atol)

    def __matmul__(self, other: "Superoperator") -> "Superoperator":
        return compose(self, other)


def identity_superoperator(n_qubits: int, basis: Basis = Basis.PAULI) -> Superoperator:
    return Superoperator(n_qubits, basis, np.eye(4**n_qubits))


def ptm_of_unitary(u: np.ndarray) -> np.ndarray:
    """Real Pauli transfer matrix ``R_ij = tr(P_i U P_j U^dag) / d``."""
    u = np.asarray(u, dtype=complex)
    dim = u.shape[0]
    n = dim.bit_length() - 1
    paulis = pauli_basis(n)
    conj = u @ paulis @ u.conj().T
    return np.einsum("ikl,jlk->ij", paulis, conj).real / dim


def ptm_of_kraus(kraus_ops: Iterable[np.ndarray]) -> np.ndarray:
    ops = [np.asarray(k, dtype=complex) for k in kraus_ops]
    dim = ops[0].shape[0]
    n = dim.bit_length() - 1
    paulis = pauli_basis(n)
    out = np.zeros((dim * dim, dim * dim))
    for k in ops:
        out += np.einsum("ikl,jlk->ij", paulis, k @ paulis @ k.conj().T).real
    return out / dim


def unitary_to_superoperator(u: DenseUnitary | np.ndarray, basis: Basis = Basis.PAULI) -> Superoperator:
    m = u.matrix if isinstance(u, DenseUnitary) else np.asarray(u, dtype=complex)
    n = m.shape[0].bit_length() - 1
    if basis is Basis.COLUMN:
        return Superoperator(n, basis, np.kron(m.conj(), m))
    return Superoperator(n, basis, ptm_of_unitary(m))


def kraus_to_superoperator(channel, basis: Basis = Basis.PAULI) -> Superoperator:
    ops = _kraus_ops(channel)
    n = ops[0].shape[0].bit_length() - 1
    if basis is Basis.COLUMN:
        return Superoperator(n, basis, sum(np.kron(k.conj(), k) for k in ops))
    return Superoperator(n, basis, ptm_of_kraus(ops))


def compose(a: Superoperator, b: Superoperator) -> Superoperator:
    """``a . b`` (apply ``b`` first)."""
    if a.n_qubits != b.n_qubits:
        raise ValueError("dimension mismatch")
    if a.basis is not b.basis:
        raise ValueError(f"basis mismatch: {a.basis.value} vs {b.basis.value}")
    return Superoperator(a.n_qubits, a.basis, a.matrix @ b.matrix)


def _vectorize(rho: np.ndarray, basis: Basis) -> np.ndarray:
    if basis is Basis.COLUMN:
        return rho.reshape(-1, order="F")
    n = rho.shape[0].bit_length() - 1
    return np.einsum("kij,ji->k", pauli_basis(n), rho) / math.sqrt(rho.shape[0])


def _devectorize(vec: np.ndarray, basis: Basis, dim: int) -> np.ndarray:
    if basis is Basis.COLUMN:
        return vec.reshape((dim, dim), order="F")
    n = dim.bit_length() - 1
    return np.einsum("k,kij->ij", vec, pauli_basis(n)) / math.sqrt(dim)


def apply(s: Superoperator, state: np.ndarray) -> np.ndarray:
    """Apply ``s`` to a density matrix and return the output density matrix."""
    rho = np.asarray(state, dtype=complex)
    dim = 1 << s.n_qubits
    if rho.shape != (dim, dim):
        raise ValueError(f"state must be {dim}x{dim}")
    return _devectorize(s.matrix @ _vectorize(rho, s.basis), s.basis, dim)


def expectation(observable: np.ndarray, state: np.ndarray) -> float:
    """``<<E|rho>> = tr(E^dag rho)``; real for Hermitian ``E``."""
    e = np.asarray(observable, dtype=complex)
    rho = np.asarray(state, dtype=complex)
    if e.shape != rho.shape:
        raise ValueError("observable and state dimensions differ")
    val = np.trace(e.conj().T @ rho)
    if abs(val.imag) > TP_ATOL and np.allclose(e, e.conj().T):
        raise ValueError(f"non-real expectation {val} for Hermitian observable")
    return float(val.real)


class TracePreservationError(ValueError):
    def __init__(self, violation: float):
        self.violation = violation
        super().__init__(f"channel is not trace preserving: ||sum K^dag K - 1||_max = {violation:.3e}")


def _kraus_ops(channel) -> list[np.ndarray]:
    ops = getattr(channel, "kraus_ops", channel)
    return [np.asarray(k, dtype=complex) for k in ops]


def tp_violation(kraus_ops: Sequence[np.ndarray]) -> float:
    dim = kraus_ops[0].shape[0]
    total = sum(k.conj().T @ k for k in kraus_ops)
    return float(np.max(np.abs(total - np.eye(dim))))


@dataclass(frozen=True)
class ChiDiagonal:
    """Diagonal of the chi matrix, ``values[a * 2**n + b]`` for ``X(a)Z(b)``."""

    n_qubits: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (4**self.n_qubits,):
            raise ValueError("chi diagonal must have 4**n entries")
        if v.min() < -1e-12:
            raise ValueError(f"negative chi diagonal entry {v.min():.3e}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, key) -> float:
        alpha, beta = key
        if not isinstance(alpha, int):
            alpha, beta = pack_bits(alpha), pack_bits(beta)
        return float(self.values[pauli_index(alpha, beta, self.n_qubits)])

    def as_dict(self, cutoff: float = 0.0) -> dict[str, float]:
        return {pauli_label(k, self.n_qubits): float(v) for k, v in enumerate(self.values) if v > cutoff}

    @classmethod
    def from_dict(cls, probs: dict[str, float]) -> "ChiDiagonal":
        n = len(next(iter(probs)))
        values = np.zeros(4**n)
        for label, p in probs.items():
            values[index_from_label(label)] += p
        return cls(n, values)


def chi_diagonal(channel) -> ChiDiagonal:
    """Pauli error probabilities ``sum_a |tr(P^dag K_a)|^2 / 4^n``."""
    ops = _kraus_ops(channel)
    violation = tp_violation(ops)
    if violation > TP_ATOL:
        raise TracePreservationError(violation)
    dim = ops[0].shape[0]
    n = dim.bit_length() - 1
    paulis = pauli_basis(n)
    coeffs = np.einsum("pji,aji->ap", paulis.conj(), np.stack(ops))
    return ChiDiagonal(n, (np.abs(coeffs) ** 2).sum(axis=0) / dim**2)


@dataclass(frozen=True)
class BiasReport:
    p_dephasing: float
    p_nondephasing: float
    bias: float
    avg_fidelity: float

    @property
    def chi_00(self) -> float:
        return 1.0 - self.p_dephasing - self.p_nondephasing


def bias_ratio(p_d: float, p_nd: float) -> float:
    """``p_d / p_nd`` with ``inf`` for pure dephasing and 0 for no error."""
    if p_nd == 0:
        return math.inf if p_d > 0 else 0.0
    return p_d / p_nd


def bias_report(chi: ChiDiagonal) -> BiasReport:
    n = chi.n_qubits
    dim = 1 << n
    v = chi.values
    if abs(v.sum() - 1) > TP_ATOL:
        raise ValueError(f"chi diagonal sums to {v.sum():.12f}, not 1")
    p_d = float(v[1:dim].sum())
    p_nd = float(v[dim:].sum())
    fid = (dim * v[0] + 1) / (dim + 1)
    return BiasReport(p_d, p_nd, bias_ratio(p_d, p_nd), float(fid))


def subspace_traces(s: Superoperator) -> tuple[float, float]:
    """Traces of the superoperator over the Z group and over P_N minus Z_N.

    Each trace is ``2**-n sum_P <<P|S|P>>`` with unnormalized Paulis, which in
    the normalized Pauli basis is a plain sum of diagonal entries.
    """
    if s.n_qubits < 1 or s.matrix.shape != (4**s.n_qubits,) * 2:
        raise ValueError("dimension mismatch")
    diag = np.real(np.diag(s.to_basis(Basis.PAULI).matrix))
    dim = 1 << s.n_qubits
    return float(diag[:dim].sum()), float(diag[dim:].sum())


def probabilities_from_traces(trace_z: float, trace_rest: float, n_qubits: int) -> tuple[float, float]:
    """Invert the subspace traces into ``(p_D, p_ND)``."""
    dim = 1 << n_qubits
    p_d = ((dim - 1) * trace_z - trace_rest) / dim**2
    p_nd = 1 - trace_z / dim
    return p_d, p_nd
