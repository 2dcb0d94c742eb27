"""Sequence generation and shot-level simulation for BRB and IBRB.

All simulation happens in the Pauli transfer matrix picture. States and
observables are vectors of Pauli coefficients, gates and noise are real
``4**N x 4**N`` matrices, and a batch of sequences of equal length is pushed
through with ``einsum`` one layer at a time.

Noise placement:

* BRB: ``L_M L U_{n+1} L U_n ... L U_1 U_0 L_P`` with one noise channel
  ``L`` after every CX-dihedral gate.
* IBRB: ``L_M L_G U_{n+1} C_n L_{C_n} L_G U_n ... C_1 L_{C_1} L_G U_1 L_P``,
  i.e. Z-group gates are followed by ``L_G`` and CX-type gates are preceded
  by their own channel.
"""
from __future__ import annotations

import csv
import functools
import json
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from biasrb.channels import KrausChannel, identity_channel
from biasrb.groups import (
    CnotDihedralElement,
    PauliGroupElement,
    ZGroupElement,
    BRB_CHARACTERS,
    IBRB_CHARACTERS,
    cd_inverse,
    cd_multiply,
    cd_ptm,
    cd_sample_uniform,
    cd_to_unitary_matrix,
    cprime_gate,
    cx_gate,
    cz_gate,
    pauli_embed,
    pauli_ptm,
    s_gate,
    sample_pauli,
    t_gate,
    x_gate,
    z_gate,
)
from biasrb.pauli import (
    TP_ATOL,
    PauliOperator,
    index_from_label,
    pack_bits,
    pauli_basis,
    pauli_label,
    unpack_bits,
)

BRB_BRANCHES = (1, 2)
IBRB_BRANCHES = ("0+", "0-", "1+", "1-", "2+", "2-")
DEFAULT_BRB_LENGTHS = (1, 2, 4, 8, 16, 32, 64)
DEFAULT_IBRB_LENGTHS = (1, 2, 5, 6, 11, 12, 21, 22)
DEFAULT_SEQUENCES = 250
DEFAULT_SHOTS_PER_SEQUENCE = 20


# ---------------------------------------------------------------------------
# states and observables
# ---------------------------------------------------------------------------

_KETS = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([1, 1], dtype=complex) / math.sqrt(2),
    "-": np.array([1, -1], dtype=complex) / math.sqrt(2),
    "i": np.array([1, 1j], dtype=complex) / math.sqrt(2),
}


def product_state(label: str) -> np.ndarray:
    """Density matrix of a product state, e.g. ``'0+'`` or ``'ii'`` (``i`` = |+i>)."""
    ket = np.array([1.0 + 0j])
    for ch in label:
        ket = np.kron(ket, _KETS[ch])
    return np.outer(ket, ket.conj())


def pauli_vector(rho: np.ndarray) -> np.ndarray:
    """Normalized Pauli coefficients ``tr(P_k rho) / sqrt(d)`` (real for Hermitian input)."""
    dim = rho.shape[0]
    n = dim.bit_length() - 1
    vec = np.einsum("kij,ji->k", pauli_basis(n), rho) / math.sqrt(dim)
    return vec.real


def observable_matrix(label: str) -> np.ndarray:
    return pauli_basis(len(label))[index_from_label(label)]


def _check_pm1_observable(observable: np.ndarray) -> None:
    """Observables must be Hermitian with eigenvalues +-1 (Pauli strings)."""
    if not np.allclose(observable, observable.conj().T, atol=1e-12):
        raise ValueError("observable is not Hermitian")
    if not np.allclose(observable @ observable, np.eye(observable.shape[0]), atol=1e-12):
        raise ValueError("observable must square to the identity (outcomes must be +-1)")


@dataclass(frozen=True)
class Preparation:
    """One realizable (state, observable) choice with its preparation weight."""

    state: str
    observable: str
    weight: int = 1


#: Table-I states and observables for CX-dihedral BRB.
def brb_preparation(b: int, n_qubits: int) -> Preparation:
    if b == 1:
        return Preparation("0" * n_qubits, "Z" * n_qubits)
    if b == 2:
        return Preparation("+" * n_qubits, "X" * n_qubits)
    raise ValueError(f"BRB branch must be 1 or 2, got {b!r}")


#: Table-II rows; each row is a list of equally likely pure preparations.
IBRB_ROWS: dict[str, tuple[tuple[Preparation, ...], ...]] = {
    "0+": ((Preparation("00", "ZI", 1), Preparation("10", "ZI", -1)),),
    "0-": ((Preparation("00", "ZZ", 1), Preparation("10", "ZZ", -1)),),
    "1+": (
        (Preparation("0+", "IX", 1), Preparation("1+", "IX", 1)),
        (Preparation("0+", "ZX", 1), Preparation("1+", "ZX", -1)),
    ),
    "1-": ((Preparation("ii", "IY", 1),),),
    "2+": ((Preparation("+0", "XI", 1),), (Preparation("i0", "YI", 1),)),
    "2-": ((Preparation("+0", "XZ", 1),), (Preparation("i0", "YZ", 1),)),
}


def ibrb_row_states(b: str) -> list[tuple[np.ndarray, str]]:
    """The (possibly mixed or non-positive) ``rho_b`` of each Table-II row."""
    out = []
    for row in IBRB_ROWS[b]:
        rho = sum(p.weight * product_state(p.state) for p in row) / len(row)
        out.append((rho, row[0].observable))
    return out


# ---------------------------------------------------------------------------
# noise model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """Channels for both protocols; unspecified channels default to the identity."""

    n_qubits: int
    lambda_gate: KrausChannel | None = None
    lambda_G: KrausChannel | None = None
    lambda_C: KrausChannel | None = None
    lambda_Cprime: KrausChannel | None = None
    lambda_prep: KrausChannel | None = None
    lambda_meas: KrausChannel | None = None

    def __post_init__(self):
        for name in ("lambda_gate", "lambda_G", "lambda_C", "lambda_Cprime", "lambda_prep", "lambda_meas"):
            ch = getattr(self, name)
            if ch is None:
                object.__setattr__(self, name, identity_channel(self.n_qubits))
            elif ch.n_qubits != self.n_qubits:
                raise ValueError(f"{name} acts on {ch.n_qubits} qubits, expected {self.n_qubits}")

    @functools.cached_property
    def ptms(self) -> dict[str, np.ndarray]:
        return {
            name: getattr(self, name).ptm()
            for name in ("lambda_gate", "lambda_G", "lambda_C", "lambda_Cprime", "lambda_prep", "lambda_meas")
        }

    @classmethod
    def ideal(cls, n_qubits: int) -> "NoiseModel":
        return cls(n_qubits)


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RBSequence:
    """A single random sequence with everything needed to simulate it.

    For BRB, ``gates`` holds canonical CX-dihedral elements in time order
    (``U_1 U_0``, ``U_2``, ..., ``U_n``, inverse). For IBRB, ``gates`` holds the
    Z-group elements and ``cx_choices`` the C (0) / C' (1) choices.
    """

    protocol: str
    b: int | str
    n: int
    gates: tuple
    weight: int
    preparation: Preparation
    cx_choices: tuple[int, ...] = ()
    pauli: PauliGroupElement | None = None

    def __post_init__(self):
        if self.weight not in (1, -1):
            raise ValueError("sequence weight must be +1 or -1")


def brb_generate_sequence(n: int, n_qubits: int, rng: np.random.Generator, b: int = 1) -> RBSequence:
    """Random BRB sequence of length ``n`` weighted for branch ``b``."""
    if n < 1:
        raise ValueError("sequence length must be at least 1")
    u0 = sample_pauli(n_qubits, rng)
    us = [cd_sample_uniform(n_qubits, rng) for _ in range(n)]
    first = cd_multiply(us[0], pauli_embed(u0))
    total = us[0]
    for u in us[1:]:
        total = cd_multiply(u, total)
    gates = (first, *us[1:], cd_inverse(total))
    weight = BRB_CHARACTERS[b](u0)  # real characters: chi* = chi
    return RBSequence("BRB", b, n, gates, weight, brb_preparation(b, n_qubits), pauli=u0)


def _sample_z2(rng: np.random.Generator) -> ZGroupElement:
    return ZGroupElement(unpack_bits(int(rng.integers(4)), 2))


def ibrb_generate_sequence(b: str, n: int, rng: np.random.Generator) -> RBSequence:
    """Random IBRB sequence for branch ``b`` in ``{0+, 0-, 1+, 1-, 2+, 2-}``."""
    if b not in IBRB_BRANCHES:
        raise ValueError(f"unknown IBRB branch {b!r}")
    if n < 1:
        raise ValueError("sequence length must be at least 1")
    n_cx = 2 * n if b.startswith("2") else n
    us = tuple(_sample_z2(rng) for _ in range(n_cx + 1))
    cx = tuple(int(v) for v in rng.integers(0, 2, size=n_cx))
    rows = IBRB_ROWS[b]
    row = rows[int(rng.integers(len(rows)))]
    prep = row[int(rng.integers(len(row)))]
    weight = ibrb_weight(b, us, cx) * prep.weight
    return RBSequence("IBRB", b, n, us, weight, prep, cx_choices=cx)


def ibrb_weight(b: str, us: Sequence[ZGroupElement], cx: Sequence[int]) -> int:
    """``chi_b*({U_i}) sigma_pm({C_i})`` without the preparation sign."""
    if b.startswith("2"):
        chars = [IBRB_CHARACTERS["2+"] if i % 2 == 0 else IBRB_CHARACTERS["2-"] for i in range(len(us))]
    else:
        chars = [IBRB_CHARACTERS[b]] * len(us)
    w = 1
    for ch, u in zip(chars, us):
        w *= ch(u)
    if b.endswith("-") and sum(cx) % 2:
        w = -w
    return w


def sequence_unitary(seq: RBSequence) -> np.ndarray:
    """Noiseless unitary of the whole gate list (for BRB, ``U_0`` is folded into the first gate)."""
    if seq.protocol == "BRB":
        n = seq.gates[0].n_qubits
        u = np.eye(1 << n, dtype=complex)
        for g in seq.gates:
            u = cd_to_unitary_matrix(g) @ u
        return u
    c = cd_to_unitary_matrix(cx_gate(2, 0, 1))
    cp = cd_to_unitary_matrix(cprime_gate(2, 0, 1))
    u = np.eye(4, dtype=complex)
    for i, z in enumerate(seq.gates):
        u = _z_matrix(z) @ u
        if i < len(seq.cx_choices):
            u = (cp if seq.cx_choices[i] else c) @ u
    return u


def _z_matrix(z: ZGroupElement) -> np.ndarray:
    n = z.n_qubits
    b = pack_bits(z.beta)
    return np.diag([(-1.0) ** bin(b & x).count("1") for x in range(1 << n)]).astype(complex)


# ---------------------------------------------------------------------------
# exact expectations
# ---------------------------------------------------------------------------

def _cx_ptms() -> tuple[np.ndarray, np.ndarray]:
    return cd_ptm(cx_gate(2, 0, 1)), cd_ptm(cprime_gate(2, 0, 1))


def _z_diag(z: ZGroupElement) -> np.ndarray:
    return np.diag(pauli_ptm(0, pack_bits(z.beta), z.n_qubits))


def exact_expectations(seqs: Sequence[RBSequence], noise: NoiseModel) -> np.ndarray:
    """Noisy ``<E>`` for each sequence (sequences may have different lengths)."""
    out = np.empty(len(seqs))
    groups: dict[tuple, list[int]] = {}
    for i, s in enumerate(seqs):
        groups.setdefault((s.protocol, len(s.gates), s.preparation), []).append(i)
    for (protocol, _, prep), idx in groups.items():
        batch = [seqs[i] for i in idx]
        if protocol == "BRB":
            out[idx] = _brb_batch(batch, noise, prep)
        else:
            out[idx] = _ibrb_batch(batch, noise, prep)
    return out


def _brb_batch(seqs: Sequence[RBSequence], noise: NoiseModel, prep: Preparation) -> np.ndarray:
    p = noise.ptms
    lam = p["lambda_gate"]
    v = p["lambda_prep"] @ pauli_vector(product_state(prep.state))
    v = np.broadcast_to(v, (len(seqs), v.size)).copy()
    for t in range(len(seqs[0].gates)):
        g = np.stack([cd_ptm(s.gates[t]) for s in seqs])
        v = np.einsum("sij,sj->si", g, v) @ lam.T
    e = pauli_vector(observable_matrix(prep.observable))
    return v @ (p["lambda_meas"].T @ e)


def _ibrb_batch(seqs: Sequence[RBSequence], noise: NoiseModel, prep: Preparation) -> np.ndarray:
    p = noise.ptms
    lg = p["lambda_G"]
    c, cp = _cx_ptms()
    a = np.stack([c @ p["lambda_C"], cp @ p["lambda_Cprime"]])
    zdiag = np.stack([_z_diag(ZGroupElement(unpack_bits(k, 2))) for k in range(4)])
    v = p["lambda_prep"] @ pauli_vector(product_state(prep.state))
    v = np.broadcast_to(v, (len(seqs), v.size)).copy()
    zidx = np.array([[pack_bits(u.beta) for u in s.gates] for s in seqs])
    cidx = np.array([s.cx_choices for s in seqs], dtype=int).reshape(len(seqs), -1)
    n_u = zidx.shape[1]
    for t in range(n_u):
        v = (zdiag[zidx[:, t]] * v) @ lg.T
        if t < n_u - 1:
            v = np.einsum("sij,sj->si", a[cidx[:, t]], v)
    e = pauli_vector(observable_matrix(prep.observable))
    return v @ (p["lambda_meas"].T @ e)


def exact_expectation(seq: RBSequence, noise: NoiseModel) -> float:
    return float(exact_expectations([seq], noise)[0])


# ---------------------------------------------------------------------------
# shot simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurvivalRecord:
    """Weighted survival estimate at one (branch, length) point.

    ``plus_counts[s]`` is the number of +1 outcomes of sequence ``s`` out of
    ``shots_per_sequence``; ``weights[s]`` is its +-1 weight.
    """

    protocol: str
    b: int | str
    n: int
    weights: np.ndarray = field(repr=False)
    plus_counts: np.ndarray = field(repr=False)
    shots_per_sequence: int = DEFAULT_SHOTS_PER_SEQUENCE

    @property
    def shots(self) -> int:
        return int(len(self.weights) * self.shots_per_sequence)

    @property
    def sequence_means(self) -> np.ndarray:
        """Weighted mean outcome of each sequence."""
        m = self.shots_per_sequence
        return self.weights * (2 * self.plus_counts - m) / m

    @property
    def weighted_mean(self) -> float:
        return float(self.sequence_means.mean())

    def resample(self, idx: np.ndarray) -> "SurvivalRecord":
        return SurvivalRecord(self.protocol, self.b, self.n, self.weights[idx], self.plus_counts[idx], self.shots_per_sequence)


def sample_outcomes(expectations: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Number of +1 outcomes when each outcome is +1 with probability (1 + <E>)/2."""
    prob = np.clip((1 + np.asarray(expectations)) / 2, 0.0, 1.0)
    return rng.binomial(shots, prob)


def simulate_sequence(
    seq: RBSequence,
    noise: NoiseModel,
    shots: int,
    rng: np.random.Generator,
    observable: np.ndarray | None = None,
    initial_state: np.ndarray | None = None,
) -> SurvivalRecord:
    """Simulate one sequence with ``shots`` single-shot +-1 measurements.

    ``observable`` and ``initial_state`` override the sequence's preparation
    (used for cross-checks); the observable must be +-1 valued.
    """
    if shots < 1:
        raise ValueError("shots must be positive")
    if observable is None and initial_state is None:
        value = exact_expectation(seq, noise)
    else:
        obs = observable if observable is not None else observable_matrix(seq.preparation.observable)
        _check_pm1_observable(obs)
        rho = initial_state if initial_state is not None else product_state(seq.preparation.state)
        value = _dense_expectation(seq, noise, rho, obs)
    counts = sample_outcomes(np.array([value]), shots, rng)
    return SurvivalRecord(seq.protocol, seq.b, seq.n, np.array([seq.weight]), counts, shots)


def _dense_expectation(seq: RBSequence, noise: NoiseModel, rho: np.ndarray, obs: np.ndarray) -> float:
    """Density-matrix reference implementation used when overriding the preparation."""
    rho = noise.lambda_prep(rho)
    if seq.protocol == "BRB":
        for g in seq.gates:
            u = cd_to_unitary_matrix(g)
            rho = noise.lambda_gate(u @ rho @ u.conj().T)
    else:
        c = cd_to_unitary_matrix(cx_gate(2, 0, 1))
        cp = cd_to_unitary_matrix(cprime_gate(2, 0, 1))
        for i, z in enumerate(seq.gates):
            zm = _z_matrix(z)
            rho = noise.lambda_G(zm @ rho @ zm)
            if i < len(seq.cx_choices):
                use_prime = seq.cx_choices[i]
                rho = (noise.lambda_Cprime if use_prime else noise.lambda_C)(rho)
                u = cp if use_prime else c
                rho = u @ rho @ u.conj().T
    rho = noise.lambda_meas(rho)
    return float(np.trace(obs @ rho).real)


def point_seed(master: int, protocol: str, b, n: int, seq_index: int | None = None) -> np.random.SeedSequence:
    """Counter-based child seed for a (protocol, branch, length[, sequence]) work item."""
    proto = {"BRB": 0, "IBRB": 1}[protocol]
    b_idx = BRB_BRANCHES.index(b) if protocol == "BRB" else IBRB_BRANCHES.index(b)
    key = (proto, b_idx, int(n)) if seq_index is None else (proto, b_idx, int(n), int(seq_index))
    return np.random.SeedSequence(entropy=int(master), spawn_key=key)


def simulate_point(
    protocol: str,
    b,
    n: int,
    noise: NoiseModel,
    master_seed: int,
    n_sequences: int = DEFAULT_SEQUENCES,
    shots_per_sequence: int = DEFAULT_SHOTS_PER_SEQUENCE,
) -> SurvivalRecord:
    """Generate and simulate all sequences of one (b, n) point.

    Every sequence gets its own generator derived from ``master_seed`` and its
    (protocol, b, n, index) key, so results do not depend on scheduling.
    """
    seqs = []
    rngs = []
    for s in range(n_sequences):
        rng = np.random.default_rng(point_seed(master_seed, protocol, b, n, s))
        if protocol == "BRB":
            seqs.append(brb_generate_sequence(n, noise.n_qubits, rng, b))
        else:
            if noise.n_qubits != 2:
                raise ValueError("IBRB is defined for two qubits")
            seqs.append(ibrb_generate_sequence(b, n, rng))
        rngs.append(rng)
    values = exact_expectations(seqs, noise)
    counts = np.array([sample_outcomes(np.array([v]), shots_per_sequence, r)[0] for v, r in zip(values, rngs)])
    weights = np.array([s.weight for s in seqs])
    return SurvivalRecord(protocol, b, n, weights, counts, shots_per_sequence)


def run_experiment(
    protocol: str,
    noise: NoiseModel,
    master_seed: int,
    lengths: Sequence[int] | None = None,
    branches: Sequence | None = None,
    n_sequences: int = DEFAULT_SEQUENCES,
    shots_per_sequence: int = DEFAULT_SHOTS_PER_SEQUENCE,
) -> list[SurvivalRecord]:
    if protocol == "BRB":
        lengths = DEFAULT_BRB_LENGTHS if lengths is None else lengths
        branches = BRB_BRANCHES if branches is None else branches
    elif protocol == "IBRB":
        lengths = DEFAULT_IBRB_LENGTHS if lengths is None else lengths
        branches = IBRB_BRANCHES if branches is None else branches
        validate_ibrb_grid(lengths)
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    if not lengths:
        raise ValueError("length grid is empty")
    return [
        simulate_point(protocol, b, n, noise, master_seed, n_sequences, shots_per_sequence)
        for b in branches
        for n in sorted(lengths)
    ]


def validate_ibrb_grid(lengths: Iterable[int]) -> None:
    lengths = list(lengths)
    if not lengths:
        raise ValueError("length grid is empty")
    if not any(n % 2 == 0 for n in lengths) or not any(n % 2 == 1 for n in lengths):
        raise ValueError("IBRB needs both even and odd sequence lengths to separate the oscillating decay")
    if min(lengths) < 1:
        raise ValueError("sequence lengths must be at least 1")


# ---------------------------------------------------------------------------
# result files
# ---------------------------------------------------------------------------

RECORD_COLUMNS = ("protocol", "b", "n", "sequence_id", "weight", "shot_outcomes_aggregate", "weighted_mean")


def _parse_branch(protocol: str, text: str):
    return int(text) if protocol == "BRB" else text


def write_records_csv(records: Sequence[SurvivalRecord], path: str | Path) -> None:
    """One row per sequence; ``shot_outcomes_aggregate`` is the number of +1 outcomes."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_COLUMNS)
        for r in records:
            for s, (wt, cnt, mean) in enumerate(zip(r.weights, r.plus_counts, r.sequence_means)):
                w.writerow([r.protocol, r.b, r.n, s, int(wt), int(cnt), repr(float(mean))])


def read_records_csv(path: str | Path, shots_per_sequence: int) -> list[SurvivalRecord]:
    """Inverse of :func:`write_records_csv`; rows are regrouped by (protocol, b, n)."""
    groups: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RECORD_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            proto = row["protocol"]
            key = (proto, _parse_branch(proto, row["b"]), int(row["n"]))
            groups.setdefault(key, []).append((int(row["sequence_id"]), int(row["weight"]), int(row["shot_outcomes_aggregate"])))
    records = []
    for (proto, b, n), rows in groups.items():
        rows.sort()
        weights = np.array([r[1] for r in rows])
        counts = np.array([r[2] for r in rows])
        records.append(SurvivalRecord(proto, b, n, weights, counts, shots_per_sequence))
    return records


def write_metadata(path: str | Path, **fields) -> None:
    with open(path, "w") as fh:
        json.dump(fields, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_metadata(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# exact decays
# ---------------------------------------------------------------------------

def brb_exact_decay(noise: NoiseModel | KrausChannel, n_qubits: int | None = None) -> tuple[float, float]:
    """``(lambda_1, lambda_2)`` from the subspace traces of the gate noise."""
    ch = noise.lambda_gate if isinstance(noise, NoiseModel) else noise
    n = ch.n_qubits if n_qubits is None else n_qubits
    diag = np.diag(ch.ptm())
    dim = 1 << n
    tr_z, tr_rest = diag[:dim].sum(), diag[dim:].sum()
    return float((tr_z - 1) / (dim - 1)), float(tr_rest / (dim * dim - dim))


def brb_exact_survival(noise: NoiseModel, b: int, n: int) -> float:
    """Exact group-averaged survival ``A_b lambda_b**n`` (via the D_N twirl)."""
    lam = brb_exact_decay(noise)[b - 1]
    return brb_amplitude(noise, b) * lam**n


def brb_amplitude(noise: NoiseModel, b: int) -> float:
    """SPAM amplitude ``A_b`` of the BRB decay.

    Averaging the first Pauli with its character projects onto the single
    Pauli ``E_b``, and the CX-dihedral twirl acts on it as ``lambda_b``, so
    ``A_b = <<E_b| L_M L |E_b>> <<E_b| L_P |rho_b>>`` in normalized form.
    """
    n = noise.n_qubits
    p = noise.ptms
    prep = brb_preparation(b, n)
    k = index_from_label(prep.observable)
    e = p["lambda_meas"].T @ pauli_vector(observable_matrix(prep.observable))
    r = p["lambda_prep"] @ pauli_vector(product_state(prep.state))
    return float((e @ p["lambda_gate"])[k] * r[k])


# -- IBRB -------------------------------------------------------------------

_ZPI = {
    0: ("II", "IZ", "ZI", "ZZ"),
    1: ("IX", "IY", "ZX", "ZY"),
    2: ("XI", "XZ", "YI", "YZ"),
    3: ("XX", "XY", "YX", "YY"),
}


def z2_projector_matrix(i: int) -> np.ndarray:
    d = np.zeros(16)
    d[[index_from_label(s) for s in _ZPI[i]]] = 1.0
    return np.diag(d)


def ibrb_transfer(noise: NoiseModel, sign: int) -> np.ndarray:
    """``C L + sign * C' L'`` with ``L = L_C L_G`` and ``L' = L_C' L_G``."""
    p = noise.ptms
    c, cp = _cx_ptms()
    return c @ p["lambda_C"] @ p["lambda_G"] + sign * cp @ p["lambda_Cprime"] @ p["lambda_G"]


def ibrb_operator(noise: NoiseModel, b: str) -> np.ndarray:
    """The 16x16 matrix ``M_b`` (rank at most 4, supported on one Z_2 isotypic block)."""
    sign = 1 if b.endswith("+") else -1
    x = ibrb_transfer(noise, sign)
    if b[0] in "01":
        pi = z2_projector_matrix(int(b[0]))
        return 0.5 * pi @ x @ pi
    p2, p3 = z2_projector_matrix(2), z2_projector_matrix(3)
    return 0.25 * p2 @ x @ p3 @ x @ p2


def ibrb_block(noise: NoiseModel, b: str) -> np.ndarray:
    """``M_b`` restricted to its 4-dimensional support."""
    idx = [index_from_label(s) for s in _ZPI[2 if b.startswith("2") else int(b[0])]]
    return ibrb_operator(noise, b)[np.ix_(idx, idx)]


@dataclass(frozen=True)
class IBRBDecay:
    lam: complex
    kappa: complex
    neglected: tuple[complex, complex]


def _real_if_close(z: complex, tol: float = 1e-12) -> complex | float:
    return float(z.real) if abs(z.imag) < tol else complex(z)


def ibrb_exact_decays(noise: NoiseModel) -> dict[str, IBRBDecay]:
    """Eigen-decomposition of each ``M_b``.

    The two eigenvalues of largest magnitude are kept and ordered so that
    ``Re(lambda) > Re(kappa)``; the other two are returned as neglected. For
    ``b = 0+`` the kept pair always contains the exact eigenvalue 1 from the
    identity component (the constant offset of the fit), so ``lam`` is set to
    the other one and ``kappa`` to 1.
    """
    if noise.n_qubits != 2:
        raise ValueError("IBRB decays are defined for two qubits")
    out = {}
    for b in IBRB_BRANCHES:
        vals = np.linalg.eigvals(ibrb_block(noise, b))
        if b == "0+":
            unit = int(np.argmin(np.abs(vals - 1)))
            rest = np.delete(vals, unit)
            order = np.argsort(-np.abs(rest))
            lam = rest[order[0]]
            out[b] = IBRBDecay(_real_if_close(lam), _real_if_close(vals[unit]), tuple(_real_if_close(v) for v in rest[order[1:]]))
            continue
        order = np.argsort(-np.abs(vals))
        top = vals[order[:2]]
        lam, kappa = sorted(top, key=lambda z: -z.real)
        out[b] = IBRBDecay(_real_if_close(lam), _real_if_close(kappa), tuple(_real_if_close(v) for v in vals[order[2:]]))
    return out


def ibrb_exact_survival(noise: NoiseModel, b: str, n: int) -> float:
    """Exact average of ``S_b(n)`` over all sequences and Table-II rows."""
    p = noise.ptms
    m = ibrb_operator(noise, b)
    first = z2_projector_matrix(2 if b.startswith("2") else int(b[0]))
    total = 0.0
    rows = ibrb_row_states(b)
    for rho, obs in rows:
        e = p["lambda_meas"].T @ pauli_vector(observable_matrix(obs))
        r = first @ p["lambda_prep"] @ pauli_vector(rho)
        total += float(e @ p["lambda_G"] @ np.linalg.matrix_power(m, n) @ r)
    return total / len(rows)


# ---------------------------------------------------------------------------
# randomized compiling
# ---------------------------------------------------------------------------

SUPPORTED_GATES = {"I": 1, "X": 1, "Z": 1, "S": 1, "SDG": 1, "T": 1, "TDG": 1, "CZ": 2, "CX": 2, "CPRIME": 2}


def gate_element(name: str, qubits: Sequence[int], n_qubits: int) -> CnotDihedralElement:
    name = name.upper()
    if name not in SUPPORTED_GATES:
        raise ValueError(f"gate {name!r} is not bias preserving / not supported")
    if len(qubits) != SUPPORTED_GATES[name]:
        raise ValueError(f"gate {name} acts on {SUPPORTED_GATES[name]} qubit(s)")
    q = tuple(qubits)
    return {
        "I": lambda: CnotDihedralElement.identity(n_qubits),
        "X": lambda: x_gate(n_qubits, q[0]),
        "Z": lambda: z_gate(n_qubits, q[0]),
        "S": lambda: s_gate(n_qubits, q[0]),
        "SDG": lambda: t_gate(n_qubits, q[0], 6),
        "T": lambda: t_gate(n_qubits, q[0]),
        "TDG": lambda: t_gate(n_qubits, q[0], 7),
        "CZ": lambda: cz_gate(n_qubits, q[0], q[1]),
        "CX": lambda: cx_gate(n_qubits, q[0], q[1]),
        "CPRIME": lambda: cprime_gate(n_qubits, q[0], q[1]),
    }[name]()


def circuit_unitary(circuit: Sequence[tuple[str, Sequence[int]]], n_qubits: int) -> np.ndarray:
    u = np.eye(1 << n_qubits, dtype=complex)
    for name, qubits in circuit:
        u = cd_to_unitary_matrix(gate_element(name, qubits, n_qubits)) @ u
    return u


class _Frame:
    """Phase-free Pauli ``X(a) Z(b)`` tracked in symplectic form."""

    def __init__(self, n: int):
        self.n = n
        self.a = [0] * n
        self.b = [0] * n

    def conjugate(self, name: str, q: Sequence[int]) -> None:
        """Replace the frame F by G F G^dag."""
        a, b = self.a, self.b
        if name in ("I", "X", "Z"):
            return
        if name in ("S", "SDG"):
            b[q[0]] ^= a[q[0]]
        elif name in ("T", "TDG"):
            if a[q[0]]:
                raise ValueError("T conjugates an X frame out of the Pauli group")
        elif name == "CZ":
            b[q[1]] ^= a[q[0]]
            b[q[0]] ^= a[q[1]]
        elif name in ("CX", "CPRIME"):
            c, t = q
            a[t] ^= a[c]
            b[c] ^= b[t]
        else:  # pragma: no cover - guarded by gate_element
            raise ValueError(name)

    def multiply(self, a: Sequence[int], b: Sequence[int]) -> None:
        for i in range(self.n):
            self.a[i] ^= a[i]
            self.b[i] ^= b[i]

    def operator(self) -> PauliOperator:
        return PauliOperator(self.n, tuple(self.a), tuple(self.b))


def randomized_compile(
    circuit: Sequence[tuple[str, Sequence[int]]],
    rng: np.random.Generator,
    n_qubits: int | None = None,
    targets: Iterable[int] | None = None,
    choices: dict[int, tuple[tuple[int, int], int]] | None = None,
) -> tuple[list[tuple[str, tuple[int, ...]]], PauliOperator]:
    """Z-randomize every CX (or those at positions ``targets``).

    Each randomized CX is preceded by a uniform element ``Z^bc Z^bt`` of the
    Z group on its two qubits and replaced by C' with probability 1/2. The
    returned Pauli frame ``F`` satisfies ``F * compiled = original`` up to a
    global phase. ``choices`` fixes ``((bc, bt), swap)`` per gate position.
    """
    circuit = [(name.upper(), tuple(q)) for name, q in circuit]
    if n_qubits is None:
        n_qubits = 1 + max((max(q) for _, q in circuit), default=0)
    for name, q in circuit:
        gate_element(name, q, n_qubits)  # validates
    if targets is None:
        targets = {i for i, (name, _) in enumerate(circuit) if name == "CX"}
    targets = set(targets)
    for i in targets:
        if circuit[i][0] != "CX":
            raise ValueError(f"gate {i} is {circuit[i][0]}, only CX gates are randomized")
    frame = _Frame(n_qubits)
    compiled: list[tuple[str, tuple[int, ...]]] = []
    for i, (name, q) in enumerate(circuit):
        if i not in targets:
            compiled.append((name, q))
            frame.conjugate(name, q)
            continue
        c, t = q
        if choices is not None and i in choices:
            (bc, bt), swap = choices[i]
        else:
            bc, bt = (int(v) for v in rng.integers(0, 2, size=2))
            swap = int(rng.integers(0, 2))
        if bc:
            compiled.append(("Z", (c,)))
        if bt:
            compiled.append(("Z", (t,)))
        compiled.append(("CPRIME" if swap else "CX", q))
        # compiled gate = CX . Q with Q = X_t^swap Z_c^bc Z_t^bt, so the new
        # frame is CX (F Q) CX^dag.
        qa = [0] * n_qubits
        qb = [0] * n_qubits
        qa[t] = swap
        qb[c], qb[t] = bc, bt
        frame.multiply(qa, qb)
        frame.conjugate("CX", q)
    return compiled, frame.operator()


#: Weight-four XZZX stabilizer measurement: ancilla 0, data qubits 1..4.
XZZX_CIRCUIT = (("CZ", (0, 1)), ("CX", (0, 2)), ("CX", (0, 3)), ("CZ", (0, 4)))
