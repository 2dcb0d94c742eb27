"""Acceptance criteria 1-8.

Each test prints one ``criterion N: PASS|FAIL ...`` line (outside pytest's
capture) and then asserts the same condition. Criteria 1 and 2 run the full
50-channel simulated studies and take several minutes each.
"""

import numpy as np

from biasrb.analysis import Model, brb_estimates, fit_decay, ibrb_estimates, run_sweep
from biasrb.channels import chi_matrix_from_ptm, compose_channels, composition_nd_bound, channel_probabilities, pauli_channel_from_vector, ptm_to_kraus, sweep_channel, z_twirl
from biasrb.groups import (
    cd_multiply,
    cd_sample_canonical,
    cd_to_unitary_matrix,
    dihedral_irrep_projector,
    dihedral_twirl_formula,
    enumerate_dihedral,
    group_average_projector,
    irrep_table,
    schur_average,
)
from biasrb.pauli import Basis, Superoperator, pauli_to_matrix, probabilities_from_traces
from biasrb.protocols import (
    DEFAULT_IBRB_LENGTHS,
    XZZX_CIRCUIT,
    NoiseModel,
    brb_exact_decay,
    ibrb_exact_decays,
    randomized_compile,
)

import oracles as O

SWEEP_SEED = 2024


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


# ---------------------------------------------------------------------------
# 1-2: simulated studies
# ---------------------------------------------------------------------------

def _fmt(d):
    return ", ".join(f"{k}={v:.3g}" for k, v in d.items())


def test_criterion_1_brb_study(capsys):
    res = run_sweep("BRB", 50, master_seed=SWEEP_SEED, resamples=50)
    chi_ok = all(0.5 <= v <= 2.0 for v in res.chi2.values())
    within_ok = all(v >= 0.9 for v in res.within_3.values())
    ok = chi_ok and within_ok
    report(capsys, 1, ok, f"reduced chi2 [{_fmt(res.chi2)}] in [0.5, 2]; within 3 stderr [{_fmt(res.within_3)}] >= 0.9")
    assert ok


def test_criterion_2_ibrb_study(capsys):
    res = run_sweep("IBRB", 50, master_seed=SWEEP_SEED, resamples=50)
    chi_ok = all(1.0 <= v <= 4.0 for v in res.chi2.values())
    eligible = [r for r in res.rows if r["bias_true"] <= 1e3]
    misses = [
        r["channel"] for r in eligible
        if abs(r["bias_est"] - r["bias_true"]) > 3 * r["bias_stderr"]
    ]
    ok = chi_ok and not misses
    report(
        capsys, 2, ok,
        f"reduced chi2 [{_fmt(res.chi2)}] in [1, 4]; bias outside 3 stderr for "
        f"{len(misses)} of {len(eligible)} channels with eta <= 1e3 {misses}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 3: exact-decay oracles
# ---------------------------------------------------------------------------

def test_criterion_3_exact_decay_oracles(capsys):
    rng = np.random.default_rng(3)
    brb_err = 0.0
    for n in (1, 2):
        for _ in range(20):
            probs = O.random_pauli_probs(n, rng, 0.1)
            est = brb_estimates(*brb_exact_decay(pauli_channel_from_vector(probs, n)), n)
            truth = O.probabilities(O.pauli_kraus(probs, n), n)
            brb_err = max(brb_err, abs(est.p_dephasing - truth[0]), abs(est.p_nondephasing - truth[1]))
    ibrb_err = 0.0
    neglected = 0.0
    for _ in range(20):
        c, cp = (pauli_channel_from_vector(O.random_pauli_probs(2, rng, 0.05), 2) for _ in range(2))
        g = pauli_channel_from_vector(O.random_pauli_probs(2, rng, 0.005), 2)
        noise = NoiseModel(2, lambda_G=g, lambda_C=c, lambda_Cprime=cp)
        dec = ibrb_exact_decays(noise)
        est = ibrb_estimates({b: (d.lam, d.kappa) for b, d in dec.items()})
        avg = (c.ptm() @ g.ptm() + cp.ptm() @ g.ptm()) / 2
        diag = np.diag(avg)
        truth = probabilities_from_traces(diag[:4].sum(), diag[4:].sum(), 2)
        ibrb_err = max(ibrb_err, abs(est.p_dephasing - truth[0]), abs(est.p_nondephasing - truth[1]))
        neglected = max(neglected, max(abs(v) for d in dec.values() for v in d.neglected))
    ok = brb_err < 1e-10 and ibrb_err < 1e-8 and neglected < 1e-12
    report(
        capsys, 3, ok,
        f"BRB max error {brb_err:.2e} (< 1e-10); IBRB max error {ibrb_err:.2e} (< 1e-8); "
        f"max neglected eigenvalue {neglected:.2e} (< 1e-12)",
    )
    assert ok


# ---------------------------------------------------------------------------
# 4: representation theory
# ---------------------------------------------------------------------------

def _block_character(proj):
    # character of the representation carried by the projector's range
    return lambda r: float(np.trace(proj @ r))


def test_criterion_4_representation_identities(capsys):
    failures = []
    # projector algebra for the Pauli, Z and CX-dihedral tables
    for group in ("pauli", "z", "dihedral"):
        ps = [p.ptm() for p, _ in irrep_table(group, 2).rows]
        for i, p in enumerate(ps):
            if not np.allclose(p @ p, p, atol=1e-10):
                failures.append(f"{group} P^2")
            for q in ps[i + 1:]:
                if not np.allclose(p @ q, 0, atol=1e-10):
                    failures.append(f"{group} orthogonality")
    rng = np.random.default_rng(4)
    # projector sums for the two abelian groups
    for group in ("pauli", "z"):
        for proj, row in irrep_table(group, 2).rows:
            if not np.allclose(group_average_projector(group, row, 2).matrix, proj.matrix, atol=1e-10):
                failures.append(f"{group} projector sum {row.name}")
    # D_1 projector sums, literally over the 16 BFS elements
    d1 = [O.ptm([u], 1) for u in O.closure_elements(O.dihedral_generators(1))]
    if len(d1) != 16:
        failures.append("D_1 size")
    for i in range(3):
        proj = dihedral_irrep_projector(i, 1).matrix
        chi = _block_character(proj)
        dim = np.trace(proj)
        total = dim / len(d1) * sum(chi(r) * r for r in d1)
        if not np.allclose(total, proj, atol=1e-10):
            failures.append(f"D_1 projector sum {i}")
    # Schur averages
    m2 = rng.normal(size=(16, 16))
    s2 = Superoperator(2, Basis.PAULI, m2)
    if not np.allclose(schur_average("pauli", s2).matrix, np.diag(np.diag(m2)), atol=1e-10):
        failures.append("P_2 Schur")
    blocks = sum(p.matrix @ m2 @ p.matrix for p, _ in irrep_table("z", 2).rows)
    if not np.allclose(schur_average("z", s2).matrix, blocks, atol=1e-10):
        failures.append("Z_2 Schur")
    m1 = rng.normal(size=(4, 4))
    literal = sum(r.T @ m1 @ r for r in d1) / len(d1)
    if not np.allclose(literal, dihedral_twirl_formula(Superoperator(1, Basis.PAULI, m1)).matrix, atol=1e-10):
        failures.append("D_1 Schur")
    n_d2 = len(enumerate_dihedral(2))
    d2_err = np.max(np.abs(schur_average("dihedral", s2).matrix - dihedral_twirl_formula(s2).matrix))
    if d2_err > 1e-9:
        failures.append(f"D_2 Schur error {d2_err:.1e}")
    ok = not failures
    report(capsys, 4, ok, f"D_2 Schur sum over {n_d2} elements, error {d2_err:.1e}; failures: {failures or 'none'}")
    assert ok


# ---------------------------------------------------------------------------
# 5: group algebra
# ---------------------------------------------------------------------------

def _canonical_count(n):
    gl = 1
    for i in range(n):
        gl *= 2**n - 2**i
    return 8 ** (2**n - 1) * 2**n * gl


def test_criterion_5_group_algebra(capsys):
    d1 = O.bfs_closure(O.dihedral_generators(1))
    d2 = O.bfs_closure(O.dihedral_generators(2))
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 4))
        g, h = cd_sample_canonical(n, rng), cd_sample_canonical(n, rng)
        dense = cd_to_unitary_matrix(g) @ cd_to_unitary_matrix(h)
        bad += not O.equal_up_to_phase(cd_to_unitary_matrix(cd_multiply(g, h)), dense)
    counts_ok = d1 == 16 == _canonical_count(1) and d2 == 12288 == _canonical_count(2)
    ok = counts_ok and bad == 0
    report(
        capsys, 5, ok,
        f"BFS |D_1| = {d1}, |D_2| = {d2} (expected 16 and 12288; closed-form count "
        f"{_canonical_count(1)}, {_canonical_count(2)}); {bad} of 1000 products disagree with dense",
    )
    assert ok


# ---------------------------------------------------------------------------
# 6: twirl and composition
# ---------------------------------------------------------------------------

def test_criterion_6_twirl_and_composition(capsys):
    rng = np.random.default_rng(6)
    cross_max = diag_max = 0.0
    ks = np.arange(16)
    cross = (ks >> 2)[:, None] != (ks >> 2)[None, :]
    for _ in range(50):
        ch = sweep_channel(rng)
        tw = z_twirl(ch.superoperator())
        chi = chi_matrix_from_ptm(tw.ptm(), 2)
        cross_max = max(cross_max, np.max(np.abs(chi[cross])))
        diag_max = max(diag_max, np.max(np.abs(np.real(np.diag(chi)) - O.chi_diag(ch.kraus_ops, 2))))
    general_viol = twirled_viol = 0
    worst_general = worst_twirled = 0.0
    for _ in range(200):
        a, b = sweep_channel(rng), sweep_channel(rng)
        pa, pb = channel_probabilities(a), channel_probabilities(b)
        p_ab = channel_probabilities(compose_channels(a, b))[1]
        ratio = abs(p_ab - pa[1] - pb[1]) / composition_nd_bound(*pa, *pb, 2)
        worst_general = max(worst_general, ratio)
        general_viol += ratio > 1
        ta = ptm_to_kraus(z_twirl(a.superoperator()).ptm(), 2)
        tb = ptm_to_kraus(z_twirl(b.superoperator()).ptm(), 2)
        pa, pb = channel_probabilities(ta), channel_probabilities(tb)
        p_ab = channel_probabilities(compose_channels(ta, tb))[1]
        ratio = abs(p_ab - pa[1] - pb[1]) / composition_nd_bound(*pa, *pb, 2, twirled=True)
        worst_twirled = max(worst_twirled, ratio)
        twirled_viol += ratio > 1
    ok = cross_max < 1e-12 and diag_max < 1e-12 and general_viol == 0 and twirled_viol == 0
    report(
        capsys, 6, ok,
        f"twirl cross-sector chi {cross_max:.1e}, diagonal change {diag_max:.1e}; "
        f"bound violations {general_viol}/200 general (worst |eps|/bound {worst_general:.3f}), "
        f"{twirled_viol}/200 twirled (worst {worst_twirled:.3f})",
    )
    assert ok


# ---------------------------------------------------------------------------
# 7: randomized compiling
# ---------------------------------------------------------------------------

GATES = ("I", "X", "Z", "S", "SDG", "CZ", "CX", "CPRIME")


def _random_circuit(rng, n_qubits, length):
    circuit = []
    x_free = True  # T gates are kept before the first CX, where no X frame can reach them
    for _ in range(length):
        names = GATES + (("T", "TDG") if x_free else ())
        name = names[int(rng.integers(len(names)))]
        if name in ("CZ", "CX", "CPRIME"):
            q = tuple(int(v) for v in rng.choice(n_qubits, 2, replace=False))
            x_free &= name == "CZ"
        else:
            q = (int(rng.integers(n_qubits)),)
        circuit.append((name, q))
    return circuit


def _compiles(circuit, n, rng):
    compiled, frame = randomized_compile(circuit, rng, n)
    lhs = pauli_to_matrix(frame).matrix @ O.circuit_matrix(compiled, n)
    return O.equal_up_to_phase(lhs, O.circuit_matrix(circuit, n))


def test_criterion_7_randomized_compiling(capsys):
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(100):
        n = int(rng.integers(2, 5))
        bad += not _compiles(_random_circuit(rng, n, int(rng.integers(2, 16))), n, rng)
    xzzx_bad = sum(not _compiles(XZZX_CIRCUIT, 5, rng) for _ in range(20))
    ok = bad == 0 and xzzx_bad == 0
    report(capsys, 7, ok, f"{bad} of 100 random circuits and {xzzx_bad} of 20 XZZX compilations differ mod phase")
    assert ok


# ---------------------------------------------------------------------------
# 8: fitting robustness
# ---------------------------------------------------------------------------

def test_criterion_8_fitting_robustness(capsys):
    rng = np.random.default_rng(8)
    n = np.array(DEFAULT_IBRB_LENGTHS, dtype=float)
    sigma = 0.005
    lam, kappa = 0.995, -0.99
    hits = 0
    for _ in range(100):
        s = 0.5 * lam**n + 0.5 * kappa**n + rng.normal(0, sigma, n.size)
        fit = fit_decay([(k, v, 1 / sigma**2) for k, v in zip(n, s)], Model.DOUBLE_EXP, oscillating=True)
        hits += abs(fit.lam - lam) <= 5 * fit.stderr["lam"] and abs(fit.kappa - kappa) <= 5 * fit.stderr["kappa"]
    noiseless_err = 0.0
    cases = [
        (Model.SINGLE_EXP, False, (0.8, 0.97), lambda p, k: p[0] * p[1] ** k, np.array([1, 2, 4, 8, 16, 32, 64.0])),
        (Model.EXP_PLUS_CONST, False, (0.6, 0.25, 0.95), lambda p, k: p[0] * p[2] ** k + p[1], n),
        (Model.DOUBLE_EXP, True, (0.5, 0.4, 0.99, -0.97), lambda p, k: p[0] * p[2] ** k + p[1] * p[3] ** k, n),
        (Model.DOUBLE_EXP, False, (0.5, 0.4, 0.98, 0.7), lambda p, k: p[0] * p[2] ** k + p[1] * p[3] ** k, n),
    ]
    for model, osc, params, f, grid in cases:
        fit = fit_decay([(k, f(params, k), 1.0) for k in grid], model, oscillating=osc)
        got = {Model.SINGLE_EXP: (fit.A, fit.lam), Model.EXP_PLUS_CONST: (fit.A, fit.B, fit.lam)}.get(
            model, (fit.A, fit.B, fit.lam, fit.kappa)
        )
        noiseless_err = max(noiseless_err, max(abs(a - b) for a, b in zip(got, params)))
    ok = hits >= 95 and noiseless_err < 1e-8
    report(capsys, 8, ok, f"{hits}/100 noisy fits within 5 stderr (>= 95); noiseless max parameter error {noiseless_err:.1e}")
    assert ok
