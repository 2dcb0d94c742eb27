"""Decay fitting, probability estimators, bootstrap errors and reduced chi-squared."""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from biasrb.channels import ChannelSpec, channel_probabilities, random_biased_channel, sweep_channel
from biasrb.pauli import bias_ratio, probabilities_from_traces
from biasrb.protocols import (
    BRB_BRANCHES,
    DEFAULT_SEQUENCES,
    DEFAULT_SHOTS_PER_SEQUENCE,
    IBRB_BRANCHES,
    NoiseModel,
    SurvivalRecord,
    run_experiment,
)

#: Allowed overshoot of decay parameters beyond [-1, 1].
FIT_SLACK = 0.05
# |S(n)| <= 1 for +-1 observables; the box stops amplitudes running off to
# infinity along the A*lam**n + B ~ linear-in-n valley when lam -> 1
AMPLITUDE_BOUND = 2.0
MAX_ITERATIONS = 200
STEP_TOL = 1e-10
#: Fraction of failed bootstrap refits that turns into an error.
MAX_BOOTSTRAP_FAILURE = 0.10


class Model(enum.Enum):
    SINGLE_EXP = "single_exp"  # A lam^n
    EXP_PLUS_CONST = "exp_plus_const"  # A lam^n + B
    DOUBLE_EXP = "double_exp"  # A lam^n + B kappa^n


class FitError(RuntimeError):
    """A decay fit could not be performed or did not converge."""


@dataclass(frozen=True)
class DecayFit:
    model: Model
    A: float
    B: float
    lam: float
    kappa: float
    residual_sum: float
    n_points: int
    converged: bool = True
    covariance: np.ndarray = field(default=None, repr=False)
    stderr: dict = field(default_factory=dict)

    def predict(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        return _evaluate(self.model, self._params(), n)

    def _params(self) -> np.ndarray:
        if self.model is Model.SINGLE_EXP:
            return np.array([self.A, self.lam])
        if self.model is Model.EXP_PLUS_CONST:
            return np.array([self.A, self.B, self.lam])
        return np.array([self.A, self.B, self.lam, self.kappa])


def _evaluate(model: Model, p: np.ndarray, n: np.ndarray) -> np.ndarray:
    if model is Model.SINGLE_EXP:
        return p[0] * p[1] ** n
    if model is Model.EXP_PLUS_CONST:
        return p[0] * p[2] ** n + p[1]
    return p[0] * p[2] ** n + p[1] * p[3] ** n


def _jacobian(model: Model, p: np.ndarray, n: np.ndarray) -> np.ndarray:
    def dpow(x):
        return n * x ** (n - 1)

    if model is Model.SINGLE_EXP:
        return np.column_stack([p[1] ** n, p[0] * dpow(p[1])])
    if model is Model.EXP_PLUS_CONST:
        return np.column_stack([p[2] ** n, np.ones_like(n), p[0] * dpow(p[2])])
    return np.column_stack([p[2] ** n, p[3] ** n, p[0] * dpow(p[2]), p[1] * dpow(p[3])])


_N_PARAMS = {Model.SINGLE_EXP: 2, Model.EXP_PLUS_CONST: 3, Model.DOUBLE_EXP: 4}
_MIN_POINTS = {Model.SINGLE_EXP: 2, Model.EXP_PLUS_CONST: 4, Model.DOUBLE_EXP: 4}
_NAMES = {
    Model.SINGLE_EXP: ("A", "lam"),
    Model.EXP_PLUS_CONST: ("A", "B", "lam"),
    Model.DOUBLE_EXP: ("A", "B", "lam", "kappa"),
}


def _single_exp_guess(n: np.ndarray, s: np.ndarray) -> tuple[float, float]:
    pos = s > 1e-6
    if pos.sum() >= 2 and len(np.unique(n[pos])) >= 2:
        slope, icpt = np.polyfit(n[pos], np.log(s[pos]), 1)
        lam = float(np.clip(np.exp(slope), -1.0, 1.0))
        return float(np.exp(icpt)), lam
    return float(s[np.argmin(n)]) or 1.0, 0.99


def _bounds(model: Model):
    big = AMPLITUDE_BOUND
    lo_l, hi_l = -1 - FIT_SLACK, 1 + FIT_SLACK
    if model is Model.SINGLE_EXP:
        return [-big, lo_l], [big, hi_l]
    if model is Model.EXP_PLUS_CONST:
        return [-big, -big, lo_l], [big, big, hi_l]
    return [-big, -big, lo_l, lo_l], [big, big, hi_l, hi_l]


def _initial_guesses(model: Model, n: np.ndarray, s: np.ndarray, oscillating: bool) -> list[np.ndarray]:
    a0, l0 = _single_exp_guess(n, s)
    if model is Model.SINGLE_EXP:
        return [np.array([a0, l0])]
    if model is Model.EXP_PLUS_CONST:
        s0 = float(s[np.argmin(n)])
        return [
            np.array([a0, 0.0, l0]),
            np.array([s0, 0.0, 0.999]),
            np.array([s.max() - s.min(), s[np.argmax(n)], 0.9]),
        ]
    if oscillating:
        even = n % 2 == 0
        guesses = [np.array([0.5, 0.5, 1.0, -1.0])]
        if even.any() and (~even).any():
            # even points see A + B, odd points A - B at small n
            se = s[even][np.argmin(n[even])]
            so = s[~even][np.argmin(n[~even])]
            guesses.append(np.array([(se + so) / 2, (se - so) / 2, 0.99, -0.99]))
        guesses.append(np.array([a0, 0.0, l0, -l0]))
        return guesses
    # both decays near one: break the A/B symmetry around the single-exp rate
    l0 = min(l0, 1.0)
    return [
        np.array([0.5, 0.5, 1.0, 1.0]) + np.array([0, 0, 0, -0.02]),
        np.array([a0 / 2, a0 / 2, min(l0 + 0.005, 1.0), l0 - 0.005]),
        np.array([a0 / 2, a0 / 2, 1.0, 1.0 - 2 * (1 - l0) - 0.01]),
        np.array([a0, 0.0, l0, 0.5 * l0]),
        np.array([a0, 0.0, l0, -l0]),
    ]


def fit_decay(
    points: Sequence[tuple[float, float, float]],
    model: Model,
    oscillating: bool = False,
    strict: bool = True,
) -> DecayFit:
    """Weighted least-squares fit of a decay model.

    ``points`` holds ``(n, S, weight)`` triples where ``weight`` is the inverse
    variance of ``S``. ``oscillating`` selects the ``(lam, kappa) = (1, -1)``
    start for branches whose second decay is near -1. The returned fit obeys
    ``Re(lam) > Re(kappa)``. ``kappa`` is NaN for the two models that do not
    fit a second decay.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("points must be (n, S, weight) triples")
    n, s, w = arr.T
    if len(n) < _MIN_POINTS[model]:
        raise FitError(f"{model.value} needs at least {_MIN_POINTS[model]} points, got {len(n)}")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    if model is Model.DOUBLE_EXP and oscillating and not ((n % 2 == 0).any() and (n % 2 == 1).any()):
        raise FitError("an oscillating double exponential needs both even and odd lengths")
    sw = np.sqrt(w / w.max())  # scale-free for the optimizer; covariance rescaled below

    def resid(p):
        return sw * (_evaluate(model, p, n) - s)

    def jac(p):
        return sw[:, None] * _jacobian(model, p, n)

    lo, hi = _bounds(model)
    best = None
    for p0 in _initial_guesses(model, n, s, oscillating):
        p0 = np.clip(p0, np.array(lo) + 1e-9, np.array(hi) - 1e-9)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = least_squares(
                resid, p0, jac=jac, bounds=(lo, hi), method="trf",
                xtol=STEP_TOL, ftol=1e-14, gtol=1e-14, max_nfev=MAX_ITERATIONS * _N_PARAMS[model],
            )
        # a converged candidate always beats one that ran out of evaluations
        key = (res.status <= 0, res.cost)
        if best is None or key < (best.status <= 0, best.cost):
            best = res
    converged = bool(best.status > 0)
    if strict and not converged:
        raise FitError(f"{model.value} fit did not converge in {MAX_ITERATIONS} iterations: {best.message}")
    p = best.x.copy()
    j = _jacobian(model, p, n) * np.sqrt(w)[:, None]
    cov = np.linalg.pinv(j.T @ j)
    if model is Model.DOUBLE_EXP and p[3] > p[2]:
        p = p[[1, 0, 3, 2]]
        cov = cov[np.ix_([1, 0, 3, 2], [1, 0, 3, 2])]
    names = _NAMES[model]
    stderr = {k: float(math.sqrt(max(cov[i, i], 0.0))) for i, k in enumerate(names)}
    residual_sum = float(np.sum(w * (_evaluate(model, p, n) - s) ** 2))
    if model is Model.SINGLE_EXP:
        a, b, lam, kappa = p[0], 0.0, p[1], math.nan
    elif model is Model.EXP_PLUS_CONST:
        a, b, lam, kappa = p[0], p[1], p[2], math.nan
    else:
        a, b, lam, kappa = p
    return DecayFit(model, float(a), float(b), float(lam), float(kappa), residual_sum, len(n), converged, cov, stderr)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BiasEstimate:
    p_dephasing: float
    p_nondephasing: float
    bias: float
    stderr_pD: float = 0.0
    stderr_pND: float = 0.0
    stderr_bias: float = 0.0
    n_resamples: int = 0
    decays: dict = field(default_factory=dict)
    failed_resamples: int = 0

    def as_dict(self) -> dict:
        return {
            "p_dephasing": self.p_dephasing,
            "p_nondephasing": self.p_nondephasing,
            "bias": self.bias,
            "stderr_pD": self.stderr_pD,
            "stderr_pND": self.stderr_pND,
            "stderr_bias": self.stderr_bias,
            "n_resamples": self.n_resamples,
            "failed_resamples": self.failed_resamples,
            "decays": self.decays,
        }


def brb_estimates(lambda_1: float, lambda_2: float, n_qubits: int) -> BiasEstimate:
    """Dephasing / non-dephasing probabilities from the two BRB decays."""
    d = 2**n_qubits
    p_d = (d - 1) / d**2 * (1 + (d - 1) * lambda_1 - d * lambda_2)
    p_nd = (d - 1) / d * (1 - lambda_1)
    return BiasEstimate(p_d, p_nd, _bias(p_d, p_nd), decays={"1": lambda_1, "2": lambda_2})


def ibrb_estimates(decays: Mapping[str, tuple[float, float]]) -> BiasEstimate:
    """Probabilities of ``(L + L')/2`` from the six IBRB decay pairs.

    Only ``lam`` is used for ``0+``; every other branch contributes
    ``(lam, kappa)``.
    """
    missing = [b for b in IBRB_BRANCHES if b not in decays]
    if missing:
        raise ValueError(f"missing IBRB branches: {missing}")
    L = {b: float(np.real(decays[b][0])) for b in IBRB_BRANCHES}
    K = {b: float(np.real(decays[b][1])) for b in IBRB_BRANCHES if b != "0+"}
    p_d = (
        3 * L["0+"] + 3 * L["0-"] - 3 * K["0-"]
        - L["1+"] - K["1+"] - L["1-"] + K["1-"]
        - L["2+"] - K["2+"] - L["2-"] - K["2-"] - 1
    ) / 16
    p_nd = 1 - (1 + L["0+"] + L["0-"] - K["0-"]) / 4
    return BiasEstimate(p_d, p_nd, _bias(p_d, p_nd), decays={b: (L[b], K.get(b, math.nan)) for b in IBRB_BRANCHES})


def _bias(p_d: float, p_nd: float) -> float:
    if p_nd == 0:
        return bias_ratio(p_d, p_nd)
    return p_d / p_nd


def branch_model(protocol: str, b) -> tuple[Model, bool]:
    """Fit model and oscillation flag for each protocol branch."""
    if protocol == "BRB":
        return Model.SINGLE_EXP, False
    if b == "0+":
        return Model.EXP_PLUS_CONST, False
    return Model.DOUBLE_EXP, b in ("0-", "1-")


def _points(records: Sequence[SurvivalRecord]) -> list[tuple[float, float, float]]:
    pts = []
    for r in sorted(records, key=lambda r: r.n):
        m = r.sequence_means
        var = m.var(ddof=1) / len(m) if len(m) > 1 else 0.0
        # floor keeps weights finite for zero-variance (noiseless) data
        pts.append((r.n, float(m.mean()), 1.0 / max(var, 1e-12)))
    return pts


def fit_records(records: Sequence[SurvivalRecord], strict: bool = True) -> dict:
    """Fit every branch present in ``records``; returns ``{b: DecayFit}``."""
    by_b: dict = {}
    for r in records:
        by_b.setdefault(r.b, []).append(r)
    fits = {}
    for b, recs in by_b.items():
        model, osc = branch_model(recs[0].protocol, b)
        fits[b] = fit_decay(_points(recs), model, oscillating=osc, strict=strict)
    return fits


def estimate_from_records(records: Sequence[SurvivalRecord], n_qubits: int, strict: bool = True) -> BiasEstimate:
    protocol = records[0].protocol
    fits = fit_records(records, strict=strict)
    if protocol == "BRB":
        for b in BRB_BRANCHES:
            if b not in fits:
                raise ValueError(f"missing BRB branch {b}")
        return brb_estimates(fits[1].lam, fits[2].lam, n_qubits)
    return ibrb_estimates({b: (f.lam, f.kappa) for b, f in fits.items()})


class BootstrapError(RuntimeError):
    pass


def bootstrap(
    records: Sequence[SurvivalRecord],
    n_qubits: int,
    resamples: int = 50,
    rng: np.random.Generator | None = None,
) -> BiasEstimate:
    """Point estimate plus bootstrap standard deviations.

    Sequences are resampled with replacement inside each (b, n) point and the
    whole fit-and-estimate pipeline is rerun on every resample.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    # canonical sequence order, so the result does not depend on how the
    # sequences were listed
    records = [r.resample(np.lexsort((r.plus_counts, r.weights))) for r in records]
    point = estimate_from_records(records, n_qubits)
    samples = []
    failures = 0
    for _ in range(resamples):
        boot = [r.resample(rng.integers(0, len(r.weights), size=len(r.weights))) for r in records]
        try:
            est = estimate_from_records(boot, n_qubits)
        except (FitError, np.linalg.LinAlgError, ValueError):
            failures += 1
            continue
        samples.append((est.p_dephasing, est.p_nondephasing, est.bias))
    if resamples and failures > MAX_BOOTSTRAP_FAILURE * resamples:
        raise BootstrapError(f"{failures} of {resamples} bootstrap refits failed")
    arr = np.array(samples) if samples else np.zeros((0, 3))

    def sd(col):
        vals = arr[:, col]
        vals = vals[np.isfinite(vals)]
        return float(vals.std(ddof=1)) if len(vals) > 1 else 0.0

    return BiasEstimate(
        point.p_dephasing, point.p_nondephasing, point.bias,
        sd(0), sd(1), sd(2), len(samples), point.decays, failures,
    )


def reduced_chi2(estimates: Sequence[float], truths: Sequence[float], stderrs: Sequence[float]) -> float:
    """``(1/K) sum ((est - truth) / stderr)**2``."""
    e, t, s = (np.asarray(x, dtype=float) for x in (estimates, truths, stderrs))
    if not (e.shape == t.shape == s.shape):
        raise ValueError("estimates, truths and stderrs must have equal lengths")
    if len(e) == 0:
        raise ValueError("need at least one estimate")
    if np.any(s <= 0):
        raise ValueError("every stderr must be positive")
    return float(np.mean(((e - t) / s) ** 2))


# ---------------------------------------------------------------------------
# simulated-experiment sweeps
# ---------------------------------------------------------------------------

#: Targets for the SPAM channel shared by every sweep experiment.
SPAM_SPEC = ChannelSpec(0.01, 0.002, 4)
#: Interleaving-gate noise is drawn from the sweep grid scaled by this factor.
INTERLEAVING_SCALE = 0.1

_QUANTITIES = ("p_dephasing", "p_nondephasing", "bias")


@dataclass(frozen=True)
class SweepChannel:
    noise: NoiseModel
    p_dephasing: float
    p_nondephasing: float

    @property
    def bias(self) -> float:
        return bias_ratio(self.p_dephasing, self.p_nondephasing)


def _sweep_rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master_seed), spawn_key=(7,) + key))


def sweep_noise_model(protocol: str, index: int, master_seed: int) -> SweepChannel:
    """Noise model and ground truth for channel ``index`` of a sweep.

    BRB: one gate channel. IBRB: independent ``L_C`` and ``L_C'`` from the
    sweep grid plus a ten times weaker ``L_G``; the truth is the probabilities
    of ``(L_C L_G + L_C' L_G) / 2``. Both share a fixed random SPAM channel.
    """
    spam = random_biased_channel(SPAM_SPEC, _sweep_rng(master_seed, 0))
    rng = _sweep_rng(master_seed, 1, index)
    if protocol == "BRB":
        ch = sweep_channel(rng)
        p_d, p_nd = channel_probabilities(ch)
        return SweepChannel(NoiseModel(2, lambda_gate=ch, lambda_prep=spam, lambda_meas=spam), p_d, p_nd)
    if protocol != "IBRB":
        raise ValueError(f"unknown protocol {protocol!r}")
    lam_c = sweep_channel(rng)
    lam_g = sweep_channel(rng, scale=INTERLEAVING_SCALE)
    lam_cp = sweep_channel(rng)
    noise = NoiseModel(2, lambda_G=lam_g, lambda_C=lam_c, lambda_Cprime=lam_cp, lambda_prep=spam, lambda_meas=spam)
    avg = (lam_c.ptm() @ lam_g.ptm() + lam_cp.ptm() @ lam_g.ptm()) / 2
    diag = np.diag(avg)
    p_d, p_nd = probabilities_from_traces(diag[:4].sum(), diag[4:].sum(), 2)
    return SweepChannel(noise, float(p_d), float(p_nd))


@dataclass
class SweepResult:
    protocol: str
    rows: list[dict]
    chi2: dict[str, float]
    within_3: dict[str, float]

    def as_dict(self) -> dict:
        return {"protocol": self.protocol, "rows": self.rows, "chi2": self.chi2, "within_3_stderr": self.within_3}


def summarize_sweep(protocol: str, rows: list[dict]) -> SweepResult:
    chi2, within = {}, {}
    for q in _QUANTITIES:
        est = np.array([r[f"{q}_est"] for r in rows])
        tru = np.array([r[f"{q}_true"] for r in rows])
        err = np.array([r[f"{q}_stderr"] for r in rows])
        chi2[q] = reduced_chi2(est, tru, err)
        within[q] = float(np.mean(np.abs(est - tru) <= 3 * err))
    return SweepResult(protocol, rows, chi2, within)


def run_sweep(
    protocol: str,
    n_channels: int = 50,
    master_seed: int = 0,
    resamples: int = 50,
    lengths: Sequence[int] | None = None,
    n_sequences: int = DEFAULT_SEQUENCES,
    shots_per_sequence: int = DEFAULT_SHOTS_PER_SEQUENCE,
    progress=None,
) -> SweepResult:
    """Simulate, fit and bootstrap ``n_channels`` random channels.

    Returns one row of (truth, estimate, stderr) per channel for p_D, p_ND
    and the bias, plus the reduced chi-squared of each quantity over the
    channels (K degrees of freedom).
    """
    rows = []
    for k in range(n_channels):
        ch = sweep_noise_model(protocol, k, master_seed)
        records = run_experiment(
            protocol, ch.noise, master_seed=int(master_seed) * 1000 + k, lengths=lengths,
            n_sequences=n_sequences, shots_per_sequence=shots_per_sequence,
        )
        est = bootstrap(records, 2, resamples, _sweep_rng(master_seed, 2, k))
        row = {
            "channel": k,
            "p_dephasing_true": ch.p_dephasing, "p_dephasing_est": est.p_dephasing, "p_dephasing_stderr": est.stderr_pD,
            "p_nondephasing_true": ch.p_nondephasing, "p_nondephasing_est": est.p_nondephasing,
            "p_nondephasing_stderr": est.stderr_pND,
            "bias_true": ch.bias, "bias_est": est.bias, "bias_stderr": est.stderr_bias,
            "failed_resamples": est.failed_resamples,
        }
        rows.append(row)
        if progress is not None:
            progress(row)
    return summarize_sweep(protocol, rows)
