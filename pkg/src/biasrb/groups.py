"""Pauli group, Z group and CX-dihedral group: exact algebra, sampling and irreps.

CX-dihedral elements act on computational basis states as

    |x> -> omega**p(x) |M x + a>,    omega = exp(i pi / 4),

with ``p`` a multilinear phase polynomial over Z_8, ``M`` an invertible binary
matrix and ``a`` a binary vector. Elements are stored modulo global phase, so
the constant term of ``p`` is always zero.

Qubit indices in this module are 0-based. Bit-vectors and monomials are packed
into integers with qubit 0 as the most significant bit (see :mod:`biasrb.pauli`).
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from biasrb.pauli import (
    MAX_QUBITS,
    DenseUnitary,
    PauliOperator,
    Superoperator,
    Basis,
    pack_bits,
    pauli_index,
    ptm_of_unitary,
    unpack_bits,
)

OMEGA = np.exp(1j * np.pi / 4)
PROJECTOR_ATOL = 1e-10
#: Largest N for which D_N is enumerated explicitly.
MAX_ENUM_QUBITS = 2
#: Canonical-form elements are tables of length 2**N; dense superoperators
#: stay limited to pauli.MAX_QUBITS.
MAX_GROUP_QUBITS = 8


def _popcount(x: int) -> int:
    return bin(x).count("1")


# ---------------------------------------------------------------------------
# phase polynomial <-> function table
# ---------------------------------------------------------------------------

def _zeta(coeffs: Sequence[int], n: int) -> list[int]:
    """Evaluate ``f(x) = sum_{m subset x} c_m`` for every ``x`` (mod 8)."""
    f = list(coeffs)
    for bit in range(n):
        step = 1 << bit
        for x in range(1 << n):
            if x & step:
                f[x] = (f[x] + f[x ^ step]) % 8
    return f


def _mobius(table: Sequence[int], n: int) -> list[int]:
    """Inverse of :func:`_zeta`: multilinear coefficients of a table mod 8."""
    c = list(table)
    for bit in range(n):
        step = 1 << bit
        for x in range(1 << n):
            if x & step:
                c[x] = (c[x] - c[x ^ step]) % 8
    return c


def _mat_vec(rows: Sequence[Sequence[int]], x: int, n: int) -> int:
    bits = unpack_bits(x, n)
    return pack_bits([sum(r[j] & bits[j] for j in range(n)) & 1 for r in rows])


def _mat_mul(a: Sequence[Sequence[int]], b: Sequence[Sequence[int]]) -> tuple[tuple[int, ...], ...]:
    n = len(a)
    return tuple(
        tuple(sum(a[i][k] & b[k][j] for k in range(n)) & 1 for j in range(n)) for i in range(n)
    )


def gf2_rank(rows: Sequence[Sequence[int]]) -> int:
    packed = [pack_bits(r) for r in rows]
    rank = 0
    for bit in reversed(range(len(rows[0]) if rows else 0)):
        pivot = next((i for i in range(rank, len(packed)) if packed[i] >> bit & 1), None)
        if pivot is None:
            continue
        packed[rank], packed[pivot] = packed[pivot], packed[rank]
        for i in range(len(packed)):
            if i != rank and packed[i] >> bit & 1:
                packed[i] ^= packed[rank]
        rank += 1
    return rank


def gf2_inverse(rows: Sequence[Sequence[int]]) -> tuple[tuple[int, ...], ...]:
    """Gauss-Jordan inverse over Z_2."""
    n = len(rows)
    aug = [list(r) + [int(i == j) for j in range(n)] for i, r in enumerate(rows)]
    for col in range(n):
        pivot = next((i for i in range(col, n) if aug[i][col]), None)
        if pivot is None:
            raise ValueError("matrix is singular over Z_2")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        for i in range(n):
            if i != col and aug[i][col]:
                aug[i] = [u ^ v for u, v in zip(aug[i], aug[col])]
    return tuple(tuple(r[n:]) for r in aug)


def _identity_rows(n: int) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(int(i == j) for j in range(n)) for i in range(n))


# ---------------------------------------------------------------------------
# CX-dihedral elements
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CnotDihedralElement:
    """Canonical form of an element of D_N modulo global phase.

    ``phase_poly[m - 1]`` is the Z_8 coefficient of the monomial whose qubit
    set is the bitmask ``m`` (``1 <= m < 2**n``). ``linear`` holds the rows of
    the binary matrix ``M`` and ``affine`` the vector ``a``.
    """

    n_qubits: int
    phase_poly: tuple[int, ...]
    linear: tuple[tuple[int, ...], ...]
    affine: tuple[int, ...]

    def __post_init__(self):
        n = self.n_qubits
        if not 1 <= n <= MAX_GROUP_QUBITS:
            raise ValueError(f"n_qubits must be in 1..{MAX_GROUP_QUBITS}")
        poly = tuple(int(c) % 8 for c in self.phase_poly)
        if len(poly) != (1 << n) - 1:
            raise ValueError("phase_poly needs one coefficient per nonempty qubit subset")
        lin = tuple(tuple(int(v) & 1 for v in row) for row in self.linear)
        if len(lin) != n or any(len(r) != n for r in lin):
            raise ValueError("linear must be an n x n binary matrix")
        if gf2_rank(lin) != n:
            raise ValueError("linear part is not invertible over Z_2")
        aff = tuple(int(v) & 1 for v in self.affine)
        if len(aff) != n:
            raise ValueError("affine must have n entries")
        object.__setattr__(self, "phase_poly", poly)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "affine", aff)

    # -- views ---------------------------------------------------------------
    @property
    def phase_terms(self) -> dict[frozenset[int], int]:
        """Nonzero phase coefficients keyed by 0-based qubit subsets."""
        n = self.n_qubits
        return {
            frozenset(i for i in range(n) if m >> (n - 1 - i) & 1): c
            for m, c in enumerate(self.phase_poly, start=1)
            if c
        }

    @functools.cached_property
    def phase_table(self) -> tuple[int, ...]:
        return tuple(_zeta((0,) + self.phase_poly, self.n_qubits))

    @functools.cached_property
    def permutation(self) -> tuple[int, ...]:
        """``perm[x] = M x + a`` for each basis index ``x``."""
        n = self.n_qubits
        a = pack_bits(self.affine)
        return tuple(_mat_vec(self.linear, x, n) ^ a for x in range(1 << n))

    @classmethod
    def from_table(cls, n_qubits: int, table: Sequence[int], linear, affine) -> "CnotDihedralElement":
        base = table[0]
        coeffs = _mobius([(t - base) % 8 for t in table], n_qubits)
        return cls(n_qubits, tuple(coeffs[1:]), linear, affine)

    @classmethod
    def identity(cls, n_qubits: int) -> "CnotDihedralElement":
        return cls(n_qubits, (0,) * ((1 << n_qubits) - 1), _identity_rows(n_qubits), (0,) * n_qubits)

    def is_identity(self) -> bool:
        return self == CnotDihedralElement.identity(self.n_qubits)

    def __mul__(self, other: "CnotDihedralElement") -> "CnotDihedralElement":
        return cd_multiply(self, other)


def cd_multiply(g: CnotDihedralElement, h: CnotDihedralElement) -> CnotDihedralElement:
    """Group product ``g h`` (``h`` acts first)."""
    if g.n_qubits != h.n_qubits:
        raise ValueError(f"qubit count mismatch: {g.n_qubits} vs {h.n_qubits}")
    n = g.n_qubits
    ph, pg = h.permutation, g.phase_table
    table = [(h.phase_table[x] + pg[ph[x]]) % 8 for x in range(1 << n)]
    linear = _mat_mul(g.linear, h.linear)
    affine_int = _mat_vec(g.linear, pack_bits(h.affine), n) ^ pack_bits(g.affine)
    return CnotDihedralElement.from_table(n, table, linear, unpack_bits(affine_int, n))


def cd_inverse(g: CnotDihedralElement) -> CnotDihedralElement:
    n = g.n_qubits
    inv_lin = gf2_inverse(g.linear)
    inv_perm = [0] * (1 << n)
    for x, y in enumerate(g.permutation):
        inv_perm[y] = x
    table = [(-g.phase_table[inv_perm[y]]) % 8 for y in range(1 << n)]
    affine = unpack_bits(_mat_vec(inv_lin, pack_bits(g.affine), n), n)
    return CnotDihedralElement.from_table(n, table, inv_lin, affine)


def cd_product(elements: Iterable[CnotDihedralElement]) -> CnotDihedralElement:
    """Product of a gate sequence listed in time order (first gate first)."""
    it = iter(elements)
    acc = next(it)
    for e in it:
        acc = cd_multiply(e, acc)
    return acc


@functools.lru_cache(maxsize=None)
def cd_to_unitary_matrix(g: CnotDihedralElement) -> np.ndarray:
    dim = 1 << g.n_qubits
    u = np.zeros((dim, dim), dtype=complex)
    for x, y in enumerate(g.permutation):
        u[y, x] = OMEGA ** g.phase_table[x]
    u.setflags(write=False)
    return u


def cd_to_unitary(g: CnotDihedralElement) -> DenseUnitary:
    return DenseUnitary(g.n_qubits, cd_to_unitary_matrix(g))


@functools.lru_cache(maxsize=200_000)
def cd_ptm(g: CnotDihedralElement) -> np.ndarray:
    """Pauli transfer matrix of ``g``; cached by canonical form."""
    m = ptm_of_unitary(cd_to_unitary_matrix(g))
    m = np.rint(m * 2) / 2 if np.allclose(m * 2, np.rint(m * 2), atol=1e-12) else m
    m.setflags(write=False)
    return m


# -- generators ---------------------------------------------------------------

def _single_mask(n: int, q: int) -> int:
    if not 0 <= q < n:
        raise ValueError(f"qubit {q} out of range for {n} qubits")
    return 1 << (n - 1 - q)


def _phase_element(n: int, terms: dict[int, int]) -> CnotDihedralElement:
    poly = [0] * ((1 << n) - 1)
    for mask, c in terms.items():
        poly[mask - 1] = c % 8
    return CnotDihedralElement(n, tuple(poly), _identity_rows(n), (0,) * n)


def t_gate(n: int, q: int, power: int = 1) -> CnotDihedralElement:
    """``T = diag(1, omega)`` on qubit ``q`` raised to ``power``."""
    return _phase_element(n, {_single_mask(n, q): power})


def z_gate(n: int, q: int) -> CnotDihedralElement:
    return t_gate(n, q, 4)


def s_gate(n: int, q: int) -> CnotDihedralElement:
    return t_gate(n, q, 2)


def x_gate(n: int, q: int) -> CnotDihedralElement:
    _single_mask(n, q)
    return CnotDihedralElement(n, (0,) * ((1 << n) - 1), _identity_rows(n), tuple(int(i == q) for i in range(n)))


def cx_gate(n: int, control: int, target: int) -> CnotDihedralElement:
    if control == target:
        raise ValueError("control and target must differ")
    _single_mask(n, control)
    _single_mask(n, target)
    rows = [list(r) for r in _identity_rows(n)]
    rows[target][control] = 1
    return CnotDihedralElement(n, (0,) * ((1 << n) - 1), tuple(map(tuple, rows)), (0,) * n)


def cz_gate(n: int, q1: int, q2: int) -> CnotDihedralElement:
    """CZ = omega**(4 x1 x2)."""
    if q1 == q2:
        raise ValueError("CZ needs two distinct qubits")
    return _phase_element(n, {_single_mask(n, q1) | _single_mask(n, q2): 4})


def cprime_gate(n: int, control: int, target: int) -> CnotDihedralElement:
    """The gate ``X_c CX_{c,t} X_c``: flips the target when the control is 0."""
    x = x_gate(n, control)
    return cd_multiply(x, cd_multiply(cx_gate(n, control, target), x))


# ---------------------------------------------------------------------------
# Pauli and Z groups
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PauliGroupElement:
    """Phase-free Pauli ``X(alpha) Z(beta)``; the group is Z_2^{2N}."""

    alpha: tuple[int, ...]
    beta: tuple[int, ...]

    def __post_init__(self):
        if len(self.alpha) != len(self.beta):
            raise ValueError("alpha and beta lengths differ")
        object.__setattr__(self, "alpha", tuple(int(v) & 1 for v in self.alpha))
        object.__setattr__(self, "beta", tuple(int(v) & 1 for v in self.beta))

    @property
    def n_qubits(self) -> int:
        return len(self.alpha)

    @property
    def a(self) -> int:
        return pack_bits(self.alpha)

    @property
    def b(self) -> int:
        return pack_bits(self.beta)

    @classmethod
    def from_ints(cls, a: int, b: int, n: int) -> "PauliGroupElement":
        return cls(unpack_bits(a, n), unpack_bits(b, n))

    def __mul__(self, other: "PauliGroupElement") -> "PauliGroupElement":
        return PauliGroupElement.from_ints(self.a ^ other.a, self.b ^ other.b, self.n_qubits)

    def to_operator(self) -> PauliOperator:
        return PauliOperator(self.n_qubits, self.alpha, self.beta)


@dataclass(frozen=True)
class ZGroupElement:
    """``Z(beta)``, the subgroup of :class:`PauliGroupElement` with alpha = 0."""

    beta: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(int(v) & 1 for v in self.beta))

    @property
    def n_qubits(self) -> int:
        return len(self.beta)

    @property
    def alpha(self) -> tuple[int, ...]:
        return (0,) * len(self.beta)

    def as_pauli(self) -> PauliGroupElement:
        return PauliGroupElement(self.alpha, self.beta)

    def __mul__(self, other: "ZGroupElement") -> "ZGroupElement":
        return ZGroupElement(tuple(x ^ y for x, y in zip(self.beta, other.beta)))


def pauli_embed(p: PauliGroupElement | ZGroupElement) -> CnotDihedralElement:
    """Canonical CX-dihedral form of ``X(alpha) Z(beta)``.

    The Z part is applied first, giving phase ``4 beta.x`` and affine ``alpha``.
    """
    n = p.n_qubits
    terms = {_single_mask(n, i): 4 for i, bit in enumerate(p.beta) if bit}
    z = _phase_element(n, terms)
    return CnotDihedralElement(n, z.phase_poly, z.linear, tuple(p.alpha))


# ---------------------------------------------------------------------------
# enumeration and sampling
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def invertible_matrices(n: int) -> tuple[tuple[tuple[int, ...], ...], ...]:
    out = []
    for bits in itertools.product((0, 1), repeat=n * n):
        rows = tuple(tuple(bits[i * n:(i + 1) * n]) for i in range(n))
        if gf2_rank(rows) == n:
            out.append(rows)
    return tuple(out)


def _dihedral_table(n: int, c: Sequence[int]) -> list[int]:
    """``f(x) = sum_v c_v [v.x]`` for linear forms ``v != 0``."""
    return [sum(c[v - 1] * (_popcount(v & x) & 1) for v in range(1, 1 << n)) % 8 for x in range(1 << n)]


@functools.lru_cache(maxsize=None)
def dihedral_phase_polys(n: int) -> tuple[tuple[int, ...], ...]:
    """All diagonal parts of D_N (sorted), as phase-poly coefficient tuples."""
    seen = set()
    for c in itertools.product(range(8), repeat=(1 << n) - 1):
        table = _dihedral_table(n, c)
        seen.add(tuple(_mobius(table, n)[1:]))
    return tuple(sorted(seen))


def dihedral_group_order(n: int) -> int:
    """``|D_N| = (#diagonal parts) * 2**N * |GL(N, 2)|``.

    The diagonal parts allow degree-k monomials only with coefficients
    divisible by ``2**(k-1)``, so there are ``prod_k (8 / 2**(k-1))**C(N,k)``.
    """
    diag = 1
    for k in range(1, n + 1):
        if k <= 3:
            diag *= (8 >> (k - 1)) ** math.comb(n, k)
    gl = 1
    for i in range(n):
        gl *= (1 << n) - (1 << i)
    return diag * (1 << n) * gl


def enumerate_dihedral(n: int) -> tuple[CnotDihedralElement, ...]:
    if n > MAX_ENUM_QUBITS:
        raise ValueError(f"D_{n} is too large to enumerate (cap N <= {MAX_ENUM_QUBITS})")
    return _enumerate_dihedral(n)


@functools.lru_cache(maxsize=None)
def _enumerate_dihedral(n: int) -> tuple[CnotDihedralElement, ...]:
    out = []
    for poly in dihedral_phase_polys(n):
        for lin in invertible_matrices(n):
            for a in itertools.product((0, 1), repeat=n):
                out.append(CnotDihedralElement(n, poly, lin, a))
    return tuple(out)


def enumerate_pauli(n: int) -> tuple[PauliGroupElement, ...]:
    return tuple(PauliGroupElement.from_ints(a, b, n) for a in range(1 << n) for b in range(1 << n))


def enumerate_z(n: int) -> tuple[ZGroupElement, ...]:
    return tuple(ZGroupElement(unpack_bits(b, n)) for b in range(1 << n))


def sample_invertible(n: int, rng: np.random.Generator) -> tuple[tuple[int, ...], ...]:
    """Uniform element of GL(N, 2) by rejection."""
    while True:
        rows = tuple(tuple(int(v) for v in rng.integers(0, 2, size=n)) for _ in range(n))
        if gf2_rank(rows) == n:
            return rows


def cd_sample_uniform(n_qubits: int, rng: np.random.Generator) -> CnotDihedralElement:
    """Uniformly random element of D_N.

    For small N this indexes the cached enumeration; otherwise it falls back
    to :func:`cd_sample_canonical`.
    """
    if not 1 <= n_qubits <= MAX_GROUP_QUBITS:
        raise ValueError(f"n_qubits must be in 1..{MAX_GROUP_QUBITS}")
    if n_qubits <= MAX_ENUM_QUBITS:
        elements = _enumerate_dihedral(n_qubits)
        return elements[int(rng.integers(len(elements)))]
    return cd_sample_canonical(n_qubits, rng)


def cd_sample_canonical(n_qubits: int, rng: np.random.Generator) -> CnotDihedralElement:
    """Uniform element of D_N drawn directly in canonical form.

    The diagonal part is drawn as ``sum_v c_v [v.x]`` with independent uniform
    ``c_v`` in Z_8 over the nonzero linear forms ``v``. This map is a group
    homomorphism onto the diagonal subgroup, so the image is uniform. The
    matrix is uniform over GL(N, 2) by rejection and the affine part is a
    uniform bit-vector.
    """
    if not 1 <= n_qubits <= MAX_GROUP_QUBITS:
        raise ValueError(f"n_qubits must be in 1..{MAX_GROUP_QUBITS}")
    c = [int(v) for v in rng.integers(0, 8, size=(1 << n_qubits) - 1)]
    table = _dihedral_table(n_qubits, c)
    linear = sample_invertible(n_qubits, rng)
    affine = tuple(int(v) for v in rng.integers(0, 2, size=n_qubits))
    return CnotDihedralElement.from_table(n_qubits, table, linear, affine)


def sample_pauli(n_qubits: int, rng: np.random.Generator) -> PauliGroupElement:
    a, b = (int(v) for v in rng.integers(0, 1 << n_qubits, size=2))
    return PauliGroupElement.from_ints(a, b, n_qubits)


def sample_z(n_qubits: int, rng: np.random.Generator) -> ZGroupElement:
    return ZGroupElement(unpack_bits(int(rng.integers(0, 1 << n_qubits)), n_qubits))


# ---------------------------------------------------------------------------
# characters and irreps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CharacterRow:
    """A one-dimensional character used to weight a protocol."""

    name: str
    func: Callable[[PauliGroupElement | ZGroupElement], int]

    def __call__(self, element) -> int:
        return self.func(element)


def _parity(bits: Iterable[int]) -> int:
    return -1 if sum(bits) % 2 else 1


#: Pauli-group characters for the two CX-dihedral bias RB decays.
BRB_CHARACTERS = {
    1: CharacterRow("b=1", lambda p: _parity(p.alpha)),
    2: CharacterRow("b=2", lambda p: _parity(p.beta)),
}

#: Z_2 characters for the interleaved protocol, keyed by decay label.
IBRB_CHARACTERS = {
    "0+": CharacterRow("0+", lambda z: 1),
    "0-": CharacterRow("0-", lambda z: 1),
    "1+": CharacterRow("1+", lambda z: _parity([z.beta[1]])),
    "1-": CharacterRow("1-", lambda z: _parity([z.beta[1]])),
    "2+": CharacterRow("2+", lambda z: _parity([z.beta[0]])),
    "2-": CharacterRow("2-", lambda z: _parity([z.beta[0], z.beta[1]])),
}


def character(row: CharacterRow, element) -> int:
    return row(element)


def pauli_irrep_character(index: Sequence[int]) -> CharacterRow:
    """Character of the Pauli-group irrep labelled by ``i in Z_4^N``.

    Per qubit: 0 -> 1, 1 -> (-1)^alpha, 2 -> (-1)^(alpha+beta), 3 -> (-1)^beta.
    """
    idx = tuple(index)

    def func(p):
        s = 0
        for i, a, b in zip(idx, p.alpha, p.beta):
            s += (0, a, a + b, b)[i]
        return _parity([s])

    return CharacterRow("P" + "".join(map(str, idx)), func)


def _diag_projector(n: int, indices: Iterable[int]) -> np.ndarray:
    d = np.zeros(4**n)
    d[list(indices)] = 1.0
    return np.diag(d)


def pauli_irrep_projector(index: Sequence[int]) -> Superoperator:
    """Rank-one PTM projector onto the Pauli picked by ``i in Z_4^N``."""
    n = len(index)
    a = pack_bits([(1 if i in (2, 3) else 0) for i in index])
    b = pack_bits([(1 if i in (1, 2) else 0) for i in index])
    return Superoperator(n, Basis.PAULI, _diag_projector(n, [pauli_index(a, b, n)]))


def z2_irrep_projector(i: int) -> Superoperator:
    """Isotypic projectors of the two-qubit Z group (multiplicity 4 each)."""
    labels = {
        0: ("II", "IZ", "ZI", "ZZ"),
        1: ("IX", "IY", "ZX", "ZY"),
        2: ("XI", "XZ", "YI", "YZ"),
        3: ("XX", "XY", "YX", "YY"),
    }[i]
    from biasrb.pauli import index_from_label

    return Superoperator(2, Basis.PAULI, _diag_projector(2, [index_from_label(s) for s in labels]))


def dihedral_irrep_projector(i: int, n: int) -> Superoperator:
    """The three D_N irreps: identity, Z group minus identity, the rest."""
    dim = 1 << n
    idx = {0: [0], 1: range(1, dim), 2: range(dim, dim * dim)}[i]
    return Superoperator(n, Basis.PAULI, _diag_projector(n, idx))


@dataclass(frozen=True)
class IrrepTable:
    group: str
    rows: tuple[tuple[Superoperator, CharacterRow | None], ...]


def irrep_table(group: str, n: int) -> IrrepTable:
    if group == "pauli":
        rows = []
        for idx in itertools.product(range(4), repeat=n):
            rows.append((pauli_irrep_projector(idx), pauli_irrep_character(idx)))
        return IrrepTable(group, tuple(rows))
    if group == "z":
        if n != 2:
            raise ValueError("Z-group irrep table is provided for N = 2")
        chars = [
            CharacterRow("Z0", lambda z: 1),
            CharacterRow("Z1", lambda z: _parity([z.beta[1]])),
            CharacterRow("Z2", lambda z: _parity([z.beta[0]])),
            CharacterRow("Z3", lambda z: _parity(z.beta)),
        ]
        return IrrepTable(group, tuple((z2_irrep_projector(i), chars[i]) for i in range(4)))
    if group == "dihedral":
        return IrrepTable(group, tuple((dihedral_irrep_projector(i, n), None) for i in range(3)))
    raise ValueError(f"unknown group {group!r}")


# ---------------------------------------------------------------------------
# group averages
# ---------------------------------------------------------------------------

def element_ptm(element) -> np.ndarray:
    if isinstance(element, CnotDihedralElement):
        return cd_ptm(element)
    if isinstance(element, ZGroupElement):
        element = element.as_pauli()
    if isinstance(element, PauliGroupElement):
        return pauli_ptm(element.a, element.b, element.n_qubits)
    raise TypeError(f"unsupported element {type(element).__name__}")


@functools.lru_cache(maxsize=None)
def pauli_ptm(a: int, b: int, n: int) -> np.ndarray:
    """Diagonal PTM of a Pauli: +1 where it commutes, -1 where it anticommutes."""
    dim = 1 << n
    diag = np.empty(dim * dim)
    for a2 in range(dim):
        for b2 in range(dim):
            anti = (_popcount(a & b2) + _popcount(b & a2)) & 1
            diag[pauli_index(a2, b2, n)] = -1.0 if anti else 1.0
    m = np.diag(diag)
    m.setflags(write=False)
    return m


def _group_elements(group: str, n: int, n_samples: int | None, rng) -> tuple[Sequence, bool]:
    if group == "pauli":
        return enumerate_pauli(n), True
    if group == "z":
        return enumerate_z(n), True
    if group == "dihedral":
        if n <= MAX_ENUM_QUBITS:
            return enumerate_dihedral(n), True
        if n_samples is None:
            raise ValueError(f"D_{n} is too large to enumerate; pass n_samples")
        rng = rng if rng is not None else np.random.default_rng()
        return [cd_sample_uniform(n, rng) for _ in range(n_samples)], False
    raise ValueError(f"unknown group {group!r}")


def group_average_projector(
    group: str,
    row: CharacterRow,
    n: int,
    dim: int = 1,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> Superoperator:
    """``dim / |G| sum_g chi*(g) g_hat`` in the Pauli basis."""
    elements, _ = _group_elements(group, n, n_samples, rng)
    acc = np.zeros((4**n, 4**n))
    for g in elements:
        acc += np.conj(row(g)) * element_ptm(g)
    return Superoperator(n, Basis.PAULI, dim * acc / len(elements))


def schur_average(
    group: str,
    s: Superoperator,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> Superoperator:
    """Twirl ``(1/|G|) sum_g g_hat^dag s g_hat`` in the Pauli basis."""
    n = s.n_qubits
    m = s.to_basis(Basis.PAULI).matrix
    elements, _ = _group_elements(group, n, n_samples, rng)
    mats = np.stack([element_ptm(g) for g in elements])
    acc = np.einsum("gji,jk,gkl->il", mats, m, mats) / len(elements)
    return Superoperator(n, Basis.PAULI, acc)


def dihedral_twirl_formula(s: Superoperator) -> Superoperator:
    """``sum_i Tr(Pi_i s) / Tr(Pi_i) Pi_i`` over the three D_N irreps."""
    n = s.n_qubits
    m = s.to_basis(Basis.PAULI).matrix
    out = np.zeros_like(m)
    for i in range(3):
        p = dihedral_irrep_projector(i, n).matrix
        out = out + np.trace(p @ m) / np.trace(p) * p
    return Superoperator(n, Basis.PAULI, out)


def iter_generators(n: int) -> Iterator[CnotDihedralElement]:
    """Generators ``{X_i, T_i, CX_ij}`` of D_N."""
    for q in range(n):
        yield x_gate(n, q)
        yield t_gate(n, q)
    for c in range(n):
        for t in range(n):
            if c != t:
                yield cx_gate(n, c, t)
