"""Kraus channels, random biased-noise generation, Z-twirling and composition bounds."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from biasrb.pauli import (
    MAX_QUBITS,
    TP_ATOL,
    Basis,
    Superoperator,
    TracePreservationError,
    bias_report,
    chi_diagonal,
    pauli_basis,
    ptm_of_kraus,
    tp_violation,
)

#: Regeneration attempts when the random Kraus operators overshoot.
MAX_RETRIES = 100
#: Empirical scaling inserted so generated channels land near the targets.
KRAUS_SCALE = 10.0


@dataclass(frozen=True)
class KrausChannel:
    n_qubits: int
    kraus_ops: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        dim = 1 << self.n_qubits
        ops = tuple(np.array(k, dtype=complex) for k in self.kraus_ops)
        if not 1 <= len(ops) <= 4**self.n_qubits:
            raise ValueError(f"need between 1 and {4**self.n_qubits} Kraus operators, got {len(ops)}")
        for k in ops:
            if k.shape != (dim, dim):
                raise ValueError(f"Kraus operator has shape {k.shape}, expected {(dim, dim)}")
            k.setflags(write=False)
        violation = tp_violation(ops)
        if violation > TP_ATOL:
            raise TracePreservationError(violation)
        object.__setattr__(self, "kraus_ops", ops)

    @property
    def d(self) -> int:
        return len(self.kraus_ops)

    def ptm(self) -> np.ndarray:
        return ptm_of_kraus(self.kraus_ops)

    def superoperator(self, basis: Basis = Basis.PAULI) -> Superoperator:
        s = Superoperator(self.n_qubits, Basis.PAULI, self.ptm())
        return s.to_basis(basis)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return sum(k @ rho @ k.conj().T for k in self.kraus_ops)


def identity_channel(n_qubits: int) -> KrausChannel:
    return KrausChannel(n_qubits, (np.eye(1 << n_qubits),))


def pauli_channel(probs: dict[str, float]) -> KrausChannel:
    """Pauli channel from ``{'IZ': p, ...}``; the identity gets the remainder."""
    n = len(next(iter(probs)))
    from biasrb.pauli import index_from_label

    basis = pauli_basis(n)
    weights = np.zeros(4**n)
    for label, p in probs.items():
        weights[index_from_label(label)] += p
    weights[0] += 1.0 - weights.sum()
    if weights.min() < -1e-15:
        raise ValueError("Pauli probabilities exceed one")
    ops = [math.sqrt(max(w, 0.0)) * basis[k] for k, w in enumerate(weights) if w > 0]
    return KrausChannel(n, tuple(ops))


def pauli_channel_from_vector(weights: np.ndarray, n_qubits: int) -> KrausChannel:
    """Pauli channel from a probability vector in package index order."""
    basis = pauli_basis(n_qubits)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    return KrausChannel(n_qubits, tuple(math.sqrt(p) * basis[k] for k, p in enumerate(w) if p > 0))


def compose_channels(a: KrausChannel, b: KrausChannel) -> KrausChannel:
    """``a . b`` (``b`` acts first). Kraus sets are multiplied pairwise.

    When the product has more than ``4**N`` operators, an equivalent set is
    rebuilt from the Choi matrix so the count invariant holds.
    """
    if a.n_qubits != b.n_qubits:
        raise ValueError("qubit count mismatch")
    ops = [ka @ kb for ka in a.kraus_ops for kb in b.kraus_ops]
    if len(ops) > 4**a.n_qubits:
        ops = _minimal_kraus(ops)
    return KrausChannel(a.n_qubits, tuple(ops))


def _minimal_kraus(ops: Sequence[np.ndarray]) -> list[np.ndarray]:
    dim = ops[0].shape[0]
    vecs = np.stack([k.reshape(-1) for k in ops], axis=1)
    choi = vecs @ vecs.conj().T
    vals, vecs = np.linalg.eigh(choi)
    keep = vals > 1e-14 * max(vals.max(), 1.0)
    out = [math.sqrt(v) * vecs[:, i].reshape(dim, dim) for i, v in zip(np.flatnonzero(keep), vals[keep])]
    return out or [np.zeros((dim, dim))]


@dataclass(frozen=True)
class ChannelSpec:
    target_p_dephasing: float
    target_p_nondephasing: float
    d: int
    seed: int | None = None
    n_qubits: int = 2

    def __post_init__(self):
        pd, pnd = self.target_p_dephasing, self.target_p_nondephasing
        if not (0 <= pd <= 1 and 0 <= pnd <= 1 and pd + pnd < 1):
            raise ValueError("targets must lie in [0, 1] with sum below 1")
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ValueError(f"n_qubits must be in 1..{MAX_QUBITS}")
        if not 1 <= self.d <= 4**self.n_qubits:
            raise ValueError(f"d must be in 1..{4**self.n_qubits}")


class ChannelGenerationError(RuntimeError):
    """Random Kraus operators kept overshooting the trace-preservation budget."""


def _random_coeffs(rng: np.random.Generator, size: int) -> np.ndarray:
    r = rng.uniform(0.0, 1.0, size)
    theta = rng.uniform(0.0, 2 * np.pi, size)
    return r * np.exp(1j * theta)


def random_biased_channel(spec: ChannelSpec, rng: np.random.Generator | None = None) -> KrausChannel:
    """Random biased channel with roughly the requested error probabilities.

    Each of the first ``d - 1`` Kraus operators is, with probability 1/2, a
    random combination of Z-type Paulis (including the identity) scaled by
    ``sqrt(10 p_D / d)``, and otherwise a random combination of Paulis with
    an X component scaled by ``sqrt(10 p_ND / d)``. The last operator is the
    Cholesky completion of ``1 - sum K^dag K``.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n, d = spec.n_qubits, spec.d
    dim = 1 << n
    paulis = pauli_basis(n)
    # Hermitian Paulis differ from X(a)Z(b) by a phase, which the uniform
    # random phase of each coefficient absorbs.
    z_ops = paulis[:dim]
    nz_ops = paulis[dim:]
    last_err = None
    for _ in range(MAX_RETRIES):
        ops = []
        for _ in range(d - 1):
            if rng.uniform() < 0.5:
                c = _random_coeffs(rng, dim)
                ops.append(math.sqrt(KRAUS_SCALE * spec.target_p_dephasing / d) * np.tensordot(c, z_ops, 1))
            else:
                c = _random_coeffs(rng, dim * dim - dim)
                ops.append(math.sqrt(KRAUS_SCALE * spec.target_p_nondephasing / d) * np.tensordot(c, nz_ops, 1))
        rest = np.eye(dim, dtype=complex) - sum((k.conj().T @ k for k in ops), np.zeros((dim, dim), complex))
        rest = (rest + rest.conj().T) / 2
        try:
            lower = np.linalg.cholesky(rest)
        except np.linalg.LinAlgError as exc:
            last_err = float(np.linalg.eigvalsh(rest).min())
            continue
        ops.append(lower.conj().T)
        return KrausChannel(n, tuple(ops))
    raise ChannelGenerationError(
        f"1 - sum K^dag K was not positive definite in {MAX_RETRIES} attempts "
        f"(last minimum eigenvalue {last_err:.3e}); lower the target probabilities"
    )


def z_twirl(channel_superop: Superoperator, n_qubits: int | None = None) -> Superoperator:
    """Average ``V^dag L V`` over the Z group.

    In the Pauli basis each Z-group element is diagonal with entry
    ``(-1)^{alpha.beta_V}``, so the average keeps exactly those PTM entries
    whose row and column Paulis have the same X part.
    """
    n = channel_superop.n_qubits if n_qubits is None else n_qubits
    if n != channel_superop.n_qubits:
        raise ValueError("qubit count mismatch")
    m = channel_superop.to_basis(Basis.PAULI).matrix
    alpha = np.arange(4**n) >> n
    mask = alpha[:, None] == alpha[None, :]
    return Superoperator(n, Basis.PAULI, np.where(mask, m, 0))


def ptm_to_kraus(ptm: np.ndarray, n_qubits: int) -> KrausChannel:
    """Recover a Kraus set from a CP Pauli transfer matrix via the chi matrix."""
    chi = chi_matrix_from_ptm(ptm, n_qubits)
    vals, vecs = np.linalg.eigh(chi)
    basis = pauli_basis(n_qubits)
    ops = []
    for v, vec in zip(vals, vecs.T):
        if v > 1e-14:
            ops.append(math.sqrt(v) * np.tensordot(vec, basis, 1))
    return KrausChannel(n_qubits, tuple(ops))


def chi_matrix_from_ptm(ptm: np.ndarray, n_qubits: int) -> np.ndarray:
    """Full chi matrix in the Hermitian Pauli basis: ``L(rho) = sum chi_kl P_k rho P_l``."""
    dim = 1 << n_qubits
    basis = pauli_basis(n_qubits)
    # column-stacking superoperator from the PTM, then Choi-like reshuffle
    s = Superoperator(n_qubits, Basis.PAULI, ptm).to_basis(Basis.COLUMN).matrix
    # S = sum chi_kl conj(P_l) kron P_k, vec(P_k rho P_l) uses P_l^T = conj(P_l)
    vecs = np.stack([np.kron(basis[l].conj(), basis[k]).reshape(-1) for k in range(dim * dim) for l in range(dim * dim)])
    coeffs = vecs.conj() @ s.reshape(-1) / dim**2
    return coeffs.reshape(dim * dim, dim * dim)


def channel_probabilities(channel: KrausChannel) -> tuple[float, float]:
    rep = bias_report(chi_diagonal(channel))
    return rep.p_dephasing, rep.p_nondephasing


def composition_nd_bound(pD_A: float, pND_A: float, pD_B: float, pND_B: float, n_qubits: int, twirled: bool = False) -> float:
    """Upper bound on ``|p_ND(A.B) - p_ND^A - p_ND^B|``.

    ``twirled=True`` gives the shorter bound for channels that have both been
    averaged over the Z group.
    """
    for p in (pD_A, pND_A, pD_B, pND_B):
        if not -1e-15 <= p <= 1 + 1e-15:
            raise ValueError(f"probability {p} outside [0, 1]")
    pD_A, pND_A, pD_B, pND_B = (max(p, 0.0) for p in (pD_A, pND_A, pD_B, pND_B))
    n = n_qubits
    sq = math.sqrt
    h = 2 ** (n / 2 + 1)
    if twirled:
        return h * (sq(pD_A) * pND_B + pND_A * sq(pD_B)) + 2**n * (pND_A * pD_B + pD_A * pND_B + pND_A * pND_B)
    return (
        2 * sq(pND_A * pND_B)
        + h * (sq(pD_A) * pND_B + pND_A * sq(pD_B) + sq(pD_A * pND_A * pND_B) + sq(pND_A * pD_B * pND_B))
        + 2**n
        * (pD_A * pND_B + pND_A * pD_B + 2 * sq(pD_A * pND_A * pD_B * pND_B) + 2 * pND_A * sq(pD_B) + 2 * sq(pD_A) * pND_B)
        + 2 ** (3 * n / 2 + 1) * (pND_A * sq(pD_B * pND_B) + sq(pD_A * pND_A) * pND_B)
        + 2 ** (2 * n) * pND_A * pND_B
    )


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def _fmt(x: float) -> float:
    # 17 significant digits reproduce every double exactly
    return float(f"{x:.17g}")


def channel_to_json(channel: KrausChannel) -> str:
    payload = {
        "n_qubits": channel.n_qubits,
        "d": channel.d,
        "kraus": [
            [[[_fmt(z.real), _fmt(z.imag)] for z in row] for row in k] for k in channel.kraus_ops
        ],
    }
    return json.dumps(payload, indent=1)


def channel_from_json(text: str) -> KrausChannel:
    payload = json.loads(text)
    ops = []
    for k in payload["kraus"]:
        arr = np.array(k, dtype=float)
        # assign parts separately: re + 1j * im would lose signed zeros
        op = np.empty(arr.shape[:-1], dtype=complex)
        op.real, op.imag = arr[..., 0], arr[..., 1]
        ops.append(op)
    if len(ops) != payload["d"]:
        raise ValueError("channel file d does not match the number of Kraus operators")
    return KrausChannel(int(payload["n_qubits"]), tuple(ops))


def save_channel(channel: KrausChannel, path: str | Path) -> None:
    Path(path).write_text(channel_to_json(channel) + "\n")


def load_channel(path: str | Path) -> KrausChannel:
    return channel_from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# sweep grid
# ---------------------------------------------------------------------------

#: Target ranges for simulated-experiment sweeps: p_ND log-uniform, p_D uniform.
SWEEP_PND_RANGE = (1e-5, 1e-2)
SWEEP_PD_RANGE = (5e-3, 5e-2)


def sweep_channel_spec(rng: np.random.Generator, n_qubits: int = 2, scale: float = 1.0) -> ChannelSpec:
    """Draw targets and a Kraus count from the sweep grid.

    ``scale`` multiplies both targets (used for the weaker interleaving-gate
    noise). ``d`` is drawn from ``2..4**N`` since ``d = 1`` is always the
    identity channel.
    """
    lo, hi = np.log10(SWEEP_PND_RANGE)
    pnd = 10 ** rng.uniform(lo, hi)
    pd = rng.uniform(*SWEEP_PD_RANGE)
    d = int(rng.integers(2, 4**n_qubits + 1))
    return ChannelSpec(pd * scale, pnd * scale, d, n_qubits=n_qubits)


def sweep_channel(rng: np.random.Generator, n_qubits: int = 2, scale: float = 1.0) -> KrausChannel:
    """A random biased channel from the sweep grid with strictly positive p_ND.

    Draws whose non-dephasing probability vanishes (every non-dephasing Kraus
    coin came up "dephasing") have infinite bias and are redrawn.
    """
    for _ in range(MAX_RETRIES):
        ch = random_biased_channel(sweep_channel_spec(rng, n_qubits, scale), rng)
        if channel_probabilities(ch)[1] > 0:
            return ch
    raise ChannelGenerationError(f"no channel with p_ND > 0 after {MAX_RETRIES} draws")
