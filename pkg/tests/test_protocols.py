import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biasrb.analysis import brb_estimates, ibrb_estimates
from biasrb.channels import KrausChannel, pauli_channel_from_vector
from biasrb.groups import cd_to_unitary_matrix
from biasrb.pauli import bias_report, chi_diagonal, pauli_to_matrix, probabilities_from_traces
from biasrb.protocols import (
    BRB_BRANCHES,
    IBRB_BRANCHES,
    IBRB_ROWS,
    XZZX_CIRCUIT,
    NoiseModel,
    SurvivalRecord,
    _dense_expectation,
    brb_exact_decay,
    brb_exact_survival,
    brb_generate_sequence,
    exact_expectations,
    ibrb_exact_decays,
    ibrb_exact_survival,
    ibrb_generate_sequence,
    observable_matrix,
    product_state,
    randomized_compile,
    read_records_csv,
    run_experiment,
    sequence_unitary,
    simulate_point,
    simulate_sequence,
    validate_ibrb_grid,
    write_metadata,
    read_metadata,
    write_records_csv,
)

import oracles as O

seeds = st.integers(0, 2**32 - 1)

KETS = {
    "0": np.array([1, 0], complex),
    "1": np.array([0, 1], complex),
    "+": np.array([1, 1], complex) / np.sqrt(2),
    "i": np.array([1, 1j]) / np.sqrt(2),
}


def oracle_state(label):
    psi = O.kron_all(k.reshape(2, 1) for k in (KETS[c] for c in label)).reshape(-1)
    return np.outer(psi, psi.conj())


def random_channel(n, rng, strength=0.2):
    return KrausChannel(n, tuple(O.random_kraus(n, int(rng.integers(2, 5)), rng, strength)))


def random_noise(rng, n=2, ibrb=False):
    if ibrb:
        return NoiseModel(
            2,
            lambda_G=random_channel(2, rng, 0.1),
            lambda_C=random_channel(2, rng),
            lambda_Cprime=random_channel(2, rng),
            lambda_prep=random_channel(2, rng, 0.1),
            lambda_meas=random_channel(2, rng, 0.1),
        )
    return NoiseModel(
        n,
        lambda_gate=random_channel(n, rng),
        lambda_prep=random_channel(n, rng, 0.1),
        lambda_meas=random_channel(n, rng, 0.1),
    )


# ---------------------------------------------------------------------------
# noiseless behaviour
# ---------------------------------------------------------------------------

def test_noiseless_brb_outcomes_are_weighted_plus_one():
    for n_qubits in (1, 2):
        recs = run_experiment("BRB", NoiseModel.ideal(n_qubits), 3, lengths=(1, 4), n_sequences=30, shots_per_sequence=7)
        for r in recs:
            assert np.all(r.sequence_means == 1.0)
            assert r.weighted_mean == 1.0


def test_noiseless_ibrb_outcomes():
    # |ii> measured with IY is deterministic only after an even number of CX
    # gates; after an odd number the observable has become ZY, which averages 0
    rng = np.random.default_rng(4)
    for b in IBRB_BRANCHES:
        for n in (1, 2, 3):
            seqs = [ibrb_generate_sequence(b, n, rng) for _ in range(40)]
            vals = exact_expectations(seqs, NoiseModel.ideal(2))
            if b == "1-" and n % 2:
                assert np.allclose(vals, 0, atol=1e-12)
            else:
                assert np.allclose(np.abs(vals), 1, atol=1e-12)
            weighted = vals * [s.weight for s in seqs]
            exact = ibrb_exact_survival(NoiseModel.ideal(2), b, n)
            tol = 1e-12 if np.ptp(weighted) == 0 else 5 * weighted.std() / np.sqrt(len(seqs))
            assert weighted.mean() == pytest.approx(exact, abs=tol)


def test_ideal_sequences_reduce_to_paulis():
    rng = np.random.default_rng(0)
    for _ in range(20):
        seq = brb_generate_sequence(int(rng.integers(1, 6)), 2, rng, int(rng.integers(1, 3)))
        pauli = cd_to_unitary_matrix(seq.gates[0]) @ np.linalg.inv(cd_to_unitary_matrix(seq.gates[0]))
        u = sequence_unitary(seq)
        assert any(O.equal_up_to_phase(u, p) for p in O.pauli_list(2))
        assert np.allclose(pauli, np.eye(4))
        b = IBRB_BRANCHES[int(rng.integers(6))]
        u = sequence_unitary(ibrb_generate_sequence(b, int(rng.integers(1, 5)), rng))
        assert np.allclose(np.abs(u) ** 2 @ np.ones(4), 1)


def test_brb_weight_is_pauli_character():
    rng = np.random.default_rng(1)
    for _ in range(50):
        b = int(rng.integers(1, 3))
        seq = brb_generate_sequence(2, 2, rng, b)
        bits = seq.pauli.alpha if b == 1 else seq.pauli.beta
        assert seq.weight == (-1) ** sum(bits)


# ---------------------------------------------------------------------------
# BRB against literal group sums
# ---------------------------------------------------------------------------

def _literal_brb_sum(noise_kraus, prep_kraus, meas_kraus, b, n):
    """Enumerate every single-qubit sequence of length n (n <= 2)."""
    group = O.closure_elements(O.dihedral_generators(1))
    paulis = [O.I2, O.X, O.Z, O.Y]
    chars = {1: [1, -1, 1, -1], 2: [1, 1, -1, -1]}[b]
    rho0 = O.apply_kraus(prep_kraus, oracle_state("0" if b == 1 else "+"))
    obs = O.Z if b == 1 else O.X
    total = 0.0
    count = 0
    for chi, p in zip(chars, paulis):
        for us in itertools.product(group, repeat=n):
            rho = p @ rho0 @ p.conj().T
            acc = np.eye(2, dtype=complex)
            for u in us:
                rho = O.apply_kraus(noise_kraus, u @ rho @ u.conj().T)
                acc = u @ acc
            inv = acc.conj().T
            rho = O.apply_kraus(meas_kraus, O.apply_kraus(noise_kraus, inv @ rho @ inv.conj().T))
            total += chi * np.trace(obs @ rho).real
            count += 1
    return total / count


def _twirl_brb(noise_kraus, prep_kraus, meas_kraus, b, n):
    """Average via the literal 16-element twirl of the gate noise."""
    group = O.closure_elements(O.dihedral_generators(1))
    lam = O.ptm(noise_kraus, 1)
    rs = [O.ptm([g], 1) for g in group]
    twirl = sum(r.T @ lam @ r for r in rs) / len(rs)
    chars = {1: [1, -1, 1, -1], 2: [1, 1, -1, -1]}[b]
    pavg = sum(c * O.ptm([p], 1) for c, p in zip(chars, [O.I2, O.X, O.Z, O.Y])) / 4
    k = 1 if b == 1 else 2  # Z or X
    state = np.zeros(4)
    state[0], state[k] = 1, 1
    chain = O.ptm(meas_kraus, 1) @ lam @ np.linalg.matrix_power(twirl, n) @ pavg @ O.ptm(prep_kraus, 1)
    return (chain @ state)[k]


def test_brb_exact_survival_matches_literal_group_sums():
    rng = np.random.default_rng(2)
    gate, prep, meas = (O.random_kraus(1, 3, rng, s) for s in (0.3, 0.1, 0.1))
    noise = NoiseModel(1, KrausChannel(1, tuple(gate)), lambda_prep=KrausChannel(1, tuple(prep)), lambda_meas=KrausChannel(1, tuple(meas)))
    for b in BRB_BRANCHES:
        for n in (1, 2):
            assert brb_exact_survival(noise, b, n) == pytest.approx(_literal_brb_sum(gate, prep, meas, b, n), abs=1e-12)
        for n in (1, 2, 5):
            assert brb_exact_survival(noise, b, n) == pytest.approx(_twirl_brb(gate, prep, meas, b, n), abs=1e-12)


def test_brb_sequence_average_converges_to_exact():
    rng = np.random.default_rng(3)
    noise = random_noise(rng)
    for b in BRB_BRANCHES:
        seqs = [brb_generate_sequence(3, 2, rng, b) for _ in range(3000)]
        vals = exact_expectations(seqs, noise) * np.array([s.weight for s in seqs])
        err = vals.std() / np.sqrt(len(vals))
        assert abs(vals.mean() - brb_exact_survival(noise, b, 3)) < 5 * err + 1e-12


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_exact_expectation_matches_dense(seed):
    rng = np.random.default_rng(seed)
    noise = random_noise(rng, ibrb=bool(seed % 2))
    if seed % 2:
        seq = ibrb_generate_sequence(IBRB_BRANCHES[int(rng.integers(6))], int(rng.integers(1, 4)), rng)
    else:
        seq = brb_generate_sequence(int(rng.integers(1, 4)), 2, rng, int(rng.integers(1, 3)))
    rho = product_state(seq.preparation.state)
    dense = _dense_expectation(seq, noise, rho, observable_matrix(seq.preparation.observable))
    assert exact_expectations([seq], noise)[0] == pytest.approx(dense, abs=1e-12)


def test_brb_exact_decay_and_estimator_on_pauli_channels():
    rng = np.random.default_rng(4)
    for n in (1, 2):
        for _ in range(20):
            probs = O.random_pauli_probs(n, rng, 0.1)
            ch = pauli_channel_from_vector(probs, n)
            est = brb_estimates(*brb_exact_decay(ch), n)
            assert (est.p_dephasing, est.p_nondephasing) == pytest.approx(O.probabilities(O.pauli_kraus(probs, n), n), abs=1e-10)


# ---------------------------------------------------------------------------
# IBRB
# ---------------------------------------------------------------------------

SECTOR_X = {"0": (0, 0), "1": (0, 1)}


def _ibrb_char(b, t, beta):
    if b[0] == "2":
        a = (1, 0) if t % 2 == 0 else (1, 1)
    else:
        a = SECTOR_X[b[0]]
    return (-1) ** (a[0] * beta[0] + a[1] * beta[1])


def _literal_ibrb(noise_kraus, b, n):
    g, c_k, cp_k, prep_k, meas_k = noise_kraus
    cx = O.gate_matrix("CX", (0, 1), 2)
    cp = O.gate_matrix("CPRIME", (0, 1), 2)
    n_cx = 2 * n if b[0] == "2" else n
    betas = list(itertools.product((0, 1), repeat=2))
    rows = []
    for row in IBRB_ROWS[b]:
        rows.append([(p.weight, oracle_state(p.state), O.pauli_from_label(p.observable)) for p in row])
    total = 0.0
    count = 0
    for us in itertools.product(betas, repeat=n_cx + 1):
        chi = np.prod([_ibrb_char(b, t, beta) for t, beta in enumerate(us)])
        for cs in itertools.product((0, 1), repeat=n_cx):
            sigma = (-1) ** sum(cs) if b.endswith("-") else 1
            row_total = 0.0
            for row in rows:
                for w, rho0, obs in row:
                    rho = O.apply_kraus(prep_k, rho0)
                    for t, beta in enumerate(us):
                        z = O.kron_all(O.Z if bit else O.I2 for bit in beta)
                        rho = O.apply_kraus(g, z @ rho @ z)
                        if t < n_cx:
                            u, k = (cp, cp_k) if cs[t] else (cx, c_k)
                            rho = u @ O.apply_kraus(k, rho) @ u.conj().T
                    rho = O.apply_kraus(meas_k, rho)
                    row_total += w * np.trace(obs @ rho).real / len(row)
            total += chi * sigma * row_total / len(rows)
            count += 1
    return total / count


def test_ibrb_exact_survival_matches_literal_average():
    rng = np.random.default_rng(5)
    kraus = [O.random_kraus(2, 3, rng, s) for s in (0.1, 0.2, 0.2, 0.1, 0.1)]
    names = ("lambda_G", "lambda_C", "lambda_Cprime", "lambda_prep", "lambda_meas")
    noise = NoiseModel(2, **{k: KrausChannel(2, tuple(v)) for k, v in zip(names, kraus)})
    for b in IBRB_BRANCHES:
        for n in ((1,) if b[0] == "2" else (1, 2)):
            assert ibrb_exact_survival(noise, b, n) == pytest.approx(_literal_ibrb(kraus, b, n), abs=1e-12)


def test_ibrb_sequence_average_converges_to_exact():
    rng = np.random.default_rng(6)
    noise = random_noise(rng, ibrb=True)
    for b in IBRB_BRANCHES:
        seqs = [ibrb_generate_sequence(b, 3, rng) for _ in range(3000)]
        vals = exact_expectations(seqs, noise) * np.array([s.weight for s in seqs])
        err = vals.std() / np.sqrt(len(vals))
        assert abs(vals.mean() - ibrb_exact_survival(noise, b, 3)) < 5 * err + 1e-12


def test_ideal_ibrb_decays():
    dec = ibrb_exact_decays(NoiseModel.ideal(2))
    for b in IBRB_BRANCHES:
        expect_kappa = -1.0 if b in ("0-", "1-") else 1.0
        assert dec[b].lam == pytest.approx(1.0, abs=1e-12)
        assert dec[b].kappa == pytest.approx(expect_kappa, abs=1e-12)
    est = ibrb_estimates({b: (d.lam, d.kappa) for b, d in dec.items()})
    assert est.p_dephasing == pytest.approx(0, abs=1e-12)
    assert est.p_nondephasing == pytest.approx(0, abs=1e-12)


def _avg_truth(noise):
    p = noise.ptms
    avg = (p["lambda_C"] @ p["lambda_G"] + p["lambda_Cprime"] @ p["lambda_G"]) / 2
    d = np.diag(avg)
    return probabilities_from_traces(d[:4].sum(), d[4:].sum(), 2)


def _cx_covariant(probs):
    r = O.ptm([O.gate_matrix("CX", (0, 1), 2)], 2)
    perm = np.argmax(np.abs(r), axis=0)
    return (probs + probs[perm]) / 2


def _ibrb_eq_error(noise):
    dec = ibrb_exact_decays(noise)
    est = ibrb_estimates({b: (d.lam, d.kappa) for b, d in dec.items()})
    t = _avg_truth(noise)
    return est.p_dephasing - t[0], est.p_nondephasing - t[1], dec


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_neglected_eigenvalues_vanish_for_equal_pauli_noise(seed):
    rng = np.random.default_rng(seed)
    ch = pauli_channel_from_vector(O.random_pauli_probs(2, rng, 0.05), 2)
    g = pauli_channel_from_vector(O.random_pauli_probs(2, rng, 0.005), 2)
    dec = ibrb_exact_decays(NoiseModel(2, lambda_G=g, lambda_C=ch, lambda_Cprime=ch))
    assert max(abs(v) for d in dec.values() for v in d.neglected) < 1e-12


def test_covariant_pauli_noise_gives_exact_nondephasing():
    rng = np.random.default_rng(7)
    for _ in range(20):
        ch = pauli_channel_from_vector(_cx_covariant(O.random_pauli_probs(2, rng, 0.05)), 2)
        _, err_nd, _ = _ibrb_eq_error(NoiseModel(2, lambda_C=ch, lambda_Cprime=ch))
        assert abs(err_nd) < 1e-12


def test_dephasing_estimate_error_is_second_order():
    rng = np.random.default_rng(8)
    base = O.random_pauli_probs(2, rng, 1.0)
    errs = []
    for scale in (0.02, 0.002):
        probs = base * scale
        probs[0] = 1 - probs[1:].sum()
        ch = pauli_channel_from_vector(probs, 2)
        errs.append(abs(_ibrb_eq_error(NoiseModel(2, lambda_C=ch, lambda_Cprime=ch))[0]))
    assert 50 < errs[0] / errs[1] < 200


def test_single_zi_error_bias_from_two_step_branches():
    # dephasing on the control alone: the 2+- branches see (1 - 2p)**2
    probs = np.zeros(16)
    probs[0], probs[2] = 0.9, 0.1  # index 2 = ZI
    ch = pauli_channel_from_vector(probs, 2)
    err_d, err_nd, dec = _ibrb_eq_error(NoiseModel(2, lambda_C=ch, lambda_Cprime=ch))
    assert dec["2+"].lam == pytest.approx(0.64)
    assert err_d == pytest.approx(-0.01)
    assert err_nd == pytest.approx(0, abs=1e-12)


def test_ibrb_pauli_oracle_with_different_channels():
    # with C and C' noise different, the neglected eigenvalues no longer vanish
    rng = np.random.default_rng(9)
    c = pauli_channel_from_vector(O.random_pauli_probs(2, rng, 0.05), 2)
    cp = pauli_channel_from_vector(O.random_pauli_probs(2, rng, 0.05), 2)
    dec = ibrb_exact_decays(NoiseModel(2, lambda_C=c, lambda_Cprime=cp))
    assert max(abs(v) for d in dec.values() for v in d.neglected) > 1e-6


# ---------------------------------------------------------------------------
# experiment plumbing
# ---------------------------------------------------------------------------

def test_ibrb_grid_validation():
    for bad in ([], [1, 3, 5], [2, 4]):
        with pytest.raises(ValueError):
            validate_ibrb_grid(bad)
    with pytest.raises(ValueError):
        run_experiment("IBRB", NoiseModel.ideal(2), 0, lengths=(1, 3))
    validate_ibrb_grid([1, 2])


def test_bad_protocol_and_lengths():
    with pytest.raises(ValueError):
        run_experiment("XRB", NoiseModel.ideal(2), 0)
    with pytest.raises(ValueError):
        brb_generate_sequence(0, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ibrb_generate_sequence("3+", 1, np.random.default_rng(0))


def test_seed_determinism():
    noise = random_noise(np.random.default_rng(10))
    a = run_experiment("BRB", noise, 42, lengths=(1, 3), n_sequences=10, shots_per_sequence=20)
    b = run_experiment("BRB", noise, 42, lengths=(1, 3), n_sequences=10, shots_per_sequence=20)
    c = run_experiment("BRB", noise, 43, lengths=(1, 3), n_sequences=10, shots_per_sequence=20)
    assert all(np.array_equal(x.plus_counts, y.plus_counts) for x, y in zip(a, b))
    assert not all(np.array_equal(x.plus_counts, y.plus_counts) for x, y in zip(a, c))


def test_sequences_do_not_depend_on_batch_size():
    noise = random_noise(np.random.default_rng(11), ibrb=True)
    small = simulate_point("IBRB", "1-", 2, noise, 5, n_sequences=5)
    large = simulate_point("IBRB", "1-", 2, noise, 5, n_sequences=12)
    assert np.array_equal(small.plus_counts, large.plus_counts[:5])
    assert np.array_equal(small.weights, large.weights[:5])


def test_shot_noise_tracks_binomial():
    noise = random_noise(np.random.default_rng(12))
    seq = brb_generate_sequence(2, 2, np.random.default_rng(13))
    value = exact_expectations([seq], noise)[0]
    rec = simulate_sequence(seq, noise, 200000, np.random.default_rng(14))
    assert (2 * rec.plus_counts[0] / 200000 - 1) == pytest.approx(value, abs=5 * np.sqrt(1 / 200000))
    with pytest.raises(ValueError):
        simulate_sequence(seq, noise, 10, np.random.default_rng(0), observable=np.diag([1, 1, 1, 2]))


def test_record_statistics_and_resample():
    rec = SurvivalRecord("BRB", 1, 3, np.array([1, -1, 1]), np.array([10, 2, 5]), 10)
    assert rec.shots == 30
    assert np.allclose(rec.sequence_means, [1.0, 0.6, 0.0])
    assert rec.weighted_mean == pytest.approx(1.6 / 3)
    sub = rec.resample(np.array([0, 0]))
    assert sub.weighted_mean == 1.0


def test_csv_round_trip(tmp_path):
    noise = random_noise(np.random.default_rng(15), ibrb=True)
    recs = run_experiment("IBRB", noise, 9, lengths=(1, 2), n_sequences=6, shots_per_sequence=4)
    recs += run_experiment("BRB", noise, 9, lengths=(1, 2), n_sequences=6, shots_per_sequence=4)
    path = tmp_path / "records.csv"
    write_records_csv(recs, path)
    back = read_records_csv(path, 4)
    key = lambda r: (r.protocol, str(r.b), r.n)
    assert [key(r) for r in sorted(back, key=key)] == [key(r) for r in sorted(recs, key=key)]
    for r, s in zip(sorted(back, key=key), sorted(recs, key=key)):
        assert r.b == s.b
        assert np.array_equal(r.weights, s.weights)
        assert np.array_equal(r.plus_counts, s.plus_counts)


def test_metadata_round_trip(tmp_path):
    write_metadata(tmp_path / "m.json", seed=3, protocol="BRB", lengths=[1, 2])
    assert read_metadata(tmp_path / "m.json") == {"seed": 3, "protocol": "BRB", "lengths": [1, 2]}


# ---------------------------------------------------------------------------
# randomized compiling
# ---------------------------------------------------------------------------

CLIFFORD_GATES = ("I", "X", "Z", "S", "SDG", "CZ", "CX", "CPRIME")


def random_circuit(rng, n_qubits, length):
    circuit = []
    seen_cx = False
    for _ in range(length):
        names = CLIFFORD_GATES if seen_cx else CLIFFORD_GATES + ("T", "TDG")
        name = names[int(rng.integers(len(names)))]
        if name in ("CZ", "CX", "CPRIME"):
            q = tuple(int(x) for x in rng.choice(n_qubits, 2, replace=False))
            seen_cx |= name != "CZ"
        else:
            q = (int(rng.integers(n_qubits)),)
        circuit.append((name, q))
    return circuit


def check_compiled(circuit, n_qubits, rng):
    compiled, frame = randomized_compile(circuit, rng, n_qubits)
    f = pauli_to_matrix(frame).matrix
    return O.equal_up_to_phase(f @ O.circuit_matrix(compiled, n_qubits), O.circuit_matrix(circuit, n_qubits))


def test_randomized_compiling_random_circuits():
    rng = np.random.default_rng(16)
    for _ in range(100):
        n = int(rng.integers(2, 5))
        assert check_compiled(random_circuit(rng, n, int(rng.integers(1, 15))), n, rng)


def test_randomized_compiling_xzzx():
    rng = np.random.default_rng(17)
    for _ in range(20):
        assert check_compiled(XZZX_CIRCUIT, 5, rng)


def test_every_choice_of_single_cx():
    for bc, bt, swap in itertools.product((0, 1), repeat=3):
        compiled, frame = randomized_compile([("CX", (0, 1))], None, 2, choices={0: ((bc, bt), swap)})
        f = pauli_to_matrix(frame).matrix
        assert O.equal_up_to_phase(f @ O.circuit_matrix(compiled, 2), O.gate_matrix("CX", (0, 1), 2))
        assert compiled[-1][0] == ("CPRIME" if swap else "CX")


def test_compiling_rejects_unsupported():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        randomized_compile([("H", (0,))], rng)
    with pytest.raises(ValueError):
        randomized_compile([("CZ", (0, 1))], rng, targets=[0])
    # an X frame reaching a T gate leaves the Pauli group
    with pytest.raises(ValueError):
        randomized_compile([("CX", (0, 1)), ("T", (1,))], rng, 2, choices={0: ((0, 0), 1)})
