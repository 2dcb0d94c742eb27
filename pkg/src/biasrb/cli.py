"""Command-line interface: ``biasrb <subcommand> ...``.

Subcommands
-----------
gen-channel    draw a random biased Kraus channel and write it as JSON
simulate-brb   simulate a CX-dihedral bias RB experiment
simulate-ibrb  simulate an interleaved bias RB experiment
analyze        fit a results directory and write an estimate report
sweep          run a many-channel simulated study with reduced chi-squared
verify         run a quick invariant suite

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from biasrb import __version__
from biasrb.analysis import (
    BootstrapError,
    FitError,
    bootstrap,
    branch_model,
    brb_estimates,
    fit_decay,
    fit_records,
    ibrb_estimates,
    run_sweep,
    _points,
)
from biasrb.channels import (
    ChannelGenerationError,
    ChannelSpec,
    KrausChannel,
    chi_matrix_from_ptm,
    load_channel,
    pauli_channel_from_vector,
    random_biased_channel,
    save_channel,
    z_twirl,
)
from biasrb.pauli import TracePreservationError, bias_report, chi_diagonal, pauli_to_matrix
from biasrb.protocols import (
    BRB_BRANCHES,
    DEFAULT_BRB_LENGTHS,
    DEFAULT_IBRB_LENGTHS,
    DEFAULT_SEQUENCES,
    DEFAULT_SHOTS_PER_SEQUENCE,
    IBRB_BRANCHES,
    NoiseModel,
    XZZX_CIRCUIT,
    brb_exact_decay,
    circuit_unitary,
    ibrb_exact_decays,
    randomized_compile,
    read_metadata,
    read_records_csv,
    run_experiment,
    validate_ibrb_grid,
    write_metadata,
    write_records_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY = 3

RECORDS_FILE = "records.csv"
METADATA_FILE = "metadata.json"
REPORT_FILE = "report.json"

# noise-model field -> accepted keys in a config's "channels" table
_CHANNEL_KEYS = {
    "lambda_gate": ("gate", "lambda_gate"),
    "lambda_G": ("G", "lambda_G"),
    "lambda_C": ("C", "lambda_C"),
    "lambda_Cprime": ("Cprime", "lambda_Cprime"),
    "lambda_prep": ("prep", "lambda_prep"),
    "lambda_meas": ("meas", "lambda_meas"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    protocol: str
    seed: int
    n_qubits: int = 2
    lengths: list[int] = field(default_factory=list)
    shots: int = DEFAULT_SEQUENCES * DEFAULT_SHOTS_PER_SEQUENCE
    sequences: int = DEFAULT_SEQUENCES
    channels: dict[str, str] = field(default_factory=dict)
    resamples: int = 50
    out: str = "results"

    def __post_init__(self):
        if self.protocol not in ("BRB", "IBRB"):
            raise UsageError(f"protocol must be BRB or IBRB, got {self.protocol!r}")
        if self.seed is None:
            raise UsageError("a master seed is required")
        if not self.lengths:
            self.lengths = list(DEFAULT_BRB_LENGTHS if self.protocol == "BRB" else DEFAULT_IBRB_LENGTHS)
        self.lengths = sorted(int(n) for n in self.lengths)
        if min(self.lengths) < 1:
            raise UsageError("sequence lengths must be positive")
        if self.protocol == "IBRB":
            if self.n_qubits != 2:
                raise UsageError("IBRB is defined for two qubits")
            try:
                validate_ibrb_grid(self.lengths)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
        if self.sequences < 1 or self.shots < self.sequences:
            raise UsageError("need at least one shot per sequence")
        if self.shots % self.sequences:
            raise UsageError(f"shots per point ({self.shots}) must be a multiple of sequences ({self.sequences})")
        known = {k for keys in _CHANNEL_KEYS.values() for k in keys}
        unknown = set(self.channels) - known
        if unknown:
            raise UsageError(f"unknown channel roles {sorted(unknown)}")

    @property
    def shots_per_sequence(self) -> int:
        return self.shots // self.sequences

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        # channel paths are relative to the config file
        chans = {k: str((path.parent / v).resolve()) for k, v in data.pop("channels", {}).items()}
        data.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(channels=chans, **data)
        except TypeError as exc:
            raise UsageError(f"bad config {path}: {exc}") from None


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _noise_from_config(cfg: ExperimentConfig) -> NoiseModel:
    kwargs = {}
    for name, keys in _CHANNEL_KEYS.items():
        for k in keys:
            if k in cfg.channels:
                try:
                    kwargs[name] = load_channel(cfg.channels[k])
                except (OSError, KeyError, ValueError) as exc:
                    raise UsageError(f"cannot load channel {cfg.channels[k]}: {exc}") from None
    return NoiseModel(cfg.n_qubits, **kwargs)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _report_dict(channel: KrausChannel) -> dict:
    rep = bias_report(chi_diagonal(channel))
    return {
        "p_dephasing": rep.p_dephasing,
        "p_nondephasing": rep.p_nondephasing,
        "bias": rep.bias,
        "avg_fidelity": rep.avg_fidelity,
    }


def cmd_gen_channel(args) -> int:
    try:
        spec = ChannelSpec(args.pd, args.pnd, args.d, seed=args.seed, n_qubits=args.n)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ch = random_biased_channel(spec, np.random.default_rng(args.seed))
    save_channel(ch, args.out)
    report = {"file": str(args.out), "n_qubits": args.n, "d": ch.d, **_report_dict(ch)}
    print(json.dumps(_jsonable(report), indent=2))
    return EXIT_OK


def _simulate(protocol: str, args) -> int:
    overrides = dict(seed=args.seed, shots=args.shots, out=args.out)
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, protocol=protocol, **overrides)
    else:
        chans = {}
        for role in ("gate", "G", "C", "Cprime", "prep", "meas"):
            val = getattr(args, f"channel_{role.lower()}", None)
            if val:
                chans[role] = str(Path(val).resolve())
        cfg = ExperimentConfig(
            protocol=protocol,
            seed=args.seed,
            n_qubits=args.n,
            lengths=args.lengths or [],
            shots=args.shots if args.shots is not None else DEFAULT_SEQUENCES * DEFAULT_SHOTS_PER_SEQUENCE,
            sequences=args.sequences,
            channels=chans,
            out=args.out or "results",
        )
    if protocol == "BRB" and cfg.channels.keys() & {"G", "C", "Cprime", "lambda_G", "lambda_C", "lambda_Cprime"}:
        raise UsageError("BRB takes a single gate channel; use --channel-gate")
    if protocol == "IBRB" and cfg.channels.keys() & {"gate", "lambda_gate"}:
        raise UsageError("IBRB takes --channel-g/--channel-c/--channel-cprime")
    noise = _noise_from_config(cfg)
    records = run_experiment(
        protocol, noise, cfg.seed, lengths=cfg.lengths,
        n_sequences=cfg.sequences, shots_per_sequence=cfg.shots_per_sequence,
    )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv(records, out / RECORDS_FILE)
    write_metadata(
        out / METADATA_FILE,
        version=__version__,
        protocol=protocol,
        n_qubits=cfg.n_qubits,
        lengths=cfg.lengths,
        branches=list(BRB_BRANCHES if protocol == "BRB" else IBRB_BRANCHES),
        sequences_per_point=cfg.sequences,
        shots_per_sequence=cfg.shots_per_sequence,
        shots_per_point=cfg.shots,
        master_seed=cfg.seed,
        channels={k: {"path": v, "sha256": _sha256(v)} for k, v in cfg.channels.items()},
        records_sha256=_sha256(out / RECORDS_FILE),
    )
    print(f"wrote {len(records)} points to {out}")
    return EXIT_OK


def cmd_simulate_brb(args) -> int:
    return _simulate("BRB", args)


def cmd_simulate_ibrb(args) -> int:
    return _simulate("IBRB", args)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def cmd_analyze(args) -> int:
    results = Path(args.results)
    meta_path, rec_path = results / METADATA_FILE, results / RECORDS_FILE
    if not meta_path.is_file() or not rec_path.is_file():
        raise UsageError(f"{results} must contain {METADATA_FILE} and {RECORDS_FILE}")
    meta = read_metadata(meta_path)
    records = read_records_csv(rec_path, meta["shots_per_sequence"])
    protocol, n_qubits = meta["protocol"], meta["n_qubits"]
    fits = fit_records(records)
    if protocol == "BRB":
        point = brb_estimates(fits[1].lam, fits[2].lam, n_qubits)
    else:
        point = ibrb_estimates({b: (f.lam, f.kappa) for b, f in fits.items()})
    seed = args.seed if args.seed is not None else meta["master_seed"]
    est = bootstrap(records, n_qubits, args.resamples, np.random.default_rng(seed))
    report = {
        "version": __version__,
        "protocol": protocol,
        "provenance": {
            "records_sha256": _sha256(rec_path),
            "metadata_sha256": _sha256(meta_path),
            "simulation_seed": meta["master_seed"],
            "bootstrap_seed": seed,
            "bootstrap_resamples": args.resamples,
        },
        "fits": {
            str(b): {
                "model": f.model.value,
                "A": f.A, "B": f.B, "lambda": f.lam, "kappa": f.kappa,
                "stderr": f.stderr,
                "residual_sum": f.residual_sum,
                "n_points": f.n_points,
                "converged": f.converged,
            }
            for b, f in fits.items()
        },
        "estimate": {
            "p_dephasing": point.p_dephasing,
            "p_nondephasing": point.p_nondephasing,
            "bias": point.bias,
            "stderr_pD": est.stderr_pD,
            "stderr_pND": est.stderr_pND,
            "stderr_bias": est.stderr_bias,
            "n_resamples": est.n_resamples,
            "failed_resamples": est.failed_resamples,
        },
    }
    out = Path(args.out) if args.out else results / REPORT_FILE
    out.write_text(json.dumps(_jsonable(report), indent=2) + "\n")
    print(json.dumps(_jsonable(report["estimate"]), indent=2))
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, seed=args.seed, shots=args.shots, out=args.out)
        protocol, lengths, seed = cfg.protocol, cfg.lengths, cfg.seed
        sequences, spp, resamples, out = cfg.sequences, cfg.shots_per_sequence, cfg.resamples, Path(cfg.out)
    else:
        shots = args.shots if args.shots is not None else DEFAULT_SEQUENCES * DEFAULT_SHOTS_PER_SEQUENCE
        cfg = ExperimentConfig(
            protocol=args.protocol, seed=args.seed, lengths=args.lengths or [],
            shots=shots, sequences=args.sequences, resamples=args.resamples,
        )
        protocol, lengths, seed = cfg.protocol, cfg.lengths, cfg.seed
        sequences, spp, resamples, out = cfg.sequences, cfg.shots_per_sequence, cfg.resamples, Path(args.out or "sweep")
    out.mkdir(parents=True, exist_ok=True)

    def progress(row):
        if not args.quiet:
            print(
                f"channel {row['channel']:3d}  pD {row['p_dephasing_true']:.4g} -> {row['p_dephasing_est']:.4g}"
                f"  pND {row['p_nondephasing_true']:.3g} -> {row['p_nondephasing_est']:.3g}",
                flush=True,
            )

    result = run_sweep(protocol, args.channels, seed, resamples, lengths, sequences, spp, progress)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(result.rows[0]))
        w.writeheader()
        w.writerows(result.rows)
    summary = {
        "protocol": protocol,
        "channels": args.channels,
        "master_seed": seed,
        "lengths": list(lengths),
        "sequences_per_point": sequences,
        "shots_per_sequence": spp,
        "bootstrap_resamples": resamples,
        "reduced_chi2": result.chi2,
        "within_3_stderr": result.within_3,
    }
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2) + "\n")
    print(json.dumps(_jsonable({"reduced_chi2": result.chi2, "within_3_stderr": result.within_3}), indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# verification suite
# ---------------------------------------------------------------------------

def _check_groups() -> str | None:
    from biasrb.groups import dihedral_group_order, enumerate_dihedral, irrep_table

    if len(enumerate_dihedral(1)) != 16 or dihedral_group_order(1) != 16:
        return "|D_1| != 16"
    for group in ("pauli", "z", "dihedral"):
        table = irrep_table(group, 2)
        ps = [proj.ptm() for proj, _ in table.rows]
        for i, p in enumerate(ps):
            if not np.allclose(p @ p, p, atol=1e-10):
                return f"{group} projector {i} not idempotent"
            for q in ps[i + 1:]:
                if not np.allclose(p @ q, 0, atol=1e-10):
                    return f"{group} projectors not orthogonal"
    return None


def _check_brb_oracle(rng) -> str | None:
    for _ in range(5):
        probs = rng.dirichlet(np.ones(16) * 0.3)
        ch = pauli_channel_from_vector(probs, 2)
        rep = bias_report(chi_diagonal(ch))
        est = brb_estimates(*brb_exact_decay(ch), 2)
        if abs(est.p_dephasing - rep.p_dephasing) > 1e-10 or abs(est.p_nondephasing - rep.p_nondephasing) > 1e-10:
            return "BRB exact decays do not reproduce Pauli-channel probabilities"
    return None


def _check_ibrb_ideal() -> str | None:
    dec = ibrb_exact_decays(NoiseModel(2))
    est = ibrb_estimates({b: (d.lam, d.kappa) for b, d in dec.items()})
    if abs(est.p_dephasing) > 1e-12 or abs(est.p_nondephasing) > 1e-12:
        return "IBRB estimates of ideal gates are not zero"
    return None


def _check_twirl(rng) -> str | None:
    ch = random_biased_channel(ChannelSpec(0.02, 0.005, 6), rng)
    tw = z_twirl(ch.superoperator())
    chi = chi_matrix_from_ptm(tw.ptm(), 2)
    alpha = np.arange(16) >> 2
    off = np.abs(chi[alpha[:, None] != alpha[None, :]]).max()
    if off > 1e-12:
        return f"z_twirl left alpha-mixing chi entries of size {off:.2e}"
    if not np.allclose(np.real(np.diag(chi)), chi_diagonal(ch).values, atol=1e-12):
        return "z_twirl changed the chi diagonal"
    return None


def _check_compile(rng) -> str | None:
    compiled, frame = randomized_compile(XZZX_CIRCUIT, rng, n_qubits=5)
    lhs = pauli_to_matrix(frame).matrix @ circuit_unitary(compiled, 5)
    rhs = circuit_unitary(XZZX_CIRCUIT, 5)
    k = np.argmax(np.abs(rhs))
    phase = lhs.flat[k] / rhs.flat[k]
    if not np.allclose(lhs, phase * rhs, atol=1e-10):
        return "randomized compilation changed the XZZX circuit"
    return None


def _check_fit() -> str | None:
    n = np.array(DEFAULT_IBRB_LENGTHS, dtype=float)
    s = 0.5 * 0.995**n + 0.5 * (-0.99) ** n
    model, osc = branch_model("IBRB", "0-")
    f = fit_decay([(a, b, 1.0) for a, b in zip(n, s)], model, oscillating=osc)
    if abs(f.lam - 0.995) > 1e-8 or abs(f.kappa + 0.99) > 1e-8:
        return "noiseless oscillating fit missed its parameters"
    return None


def _check_ideal_simulation() -> str | None:
    recs = run_experiment("BRB", NoiseModel(2), 1, lengths=(1, 4), n_sequences=10, shots_per_sequence=5)
    if any(abs(r.weighted_mean - 1) > 1e-12 for r in recs):
        return "noiseless BRB outcomes are not all +1 after weighting"
    return None


def run_verification() -> list[tuple[str, str | None]]:
    rng = np.random.default_rng(12345)
    checks = [
        ("group order and irrep projectors", _check_groups),
        ("BRB exact decays vs chi diagonal", lambda: _check_brb_oracle(rng)),
        ("IBRB ideal-gate estimates", _check_ibrb_ideal),
        ("Z twirl", lambda: _check_twirl(rng)),
        ("randomized compiling", lambda: _check_compile(rng)),
        ("noiseless decay fit", _check_fit),
        ("noiseless BRB simulation", _check_ideal_simulation),
    ]
    results = []
    for name, fn in checks:
        try:
            results.append((name, fn()))
        except Exception as exc:  # a crash is a failed check, reported with its message
            results.append((name, f"{type(exc).__name__}: {exc}"))
    return results


def cmd_verify(args) -> int:
    results = run_verification()
    for name, err in results:
        print(f"{'PASS' if err is None else 'FAIL'}  {name}" + ("" if err is None else f": {err}"))
    return EXIT_OK if all(err is None for _, err in results) else EXIT_VERIFY


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_sim_args(p: argparse.ArgumentParser, protocol: str) -> None:
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--shots", type=int, help="measurements per (b, n) point")
    p.add_argument("--sequences", type=int, default=DEFAULT_SEQUENCES, help="random sequences per point")
    p.add_argument("--lengths", type=int, nargs="+", help="sequence lengths")
    p.add_argument("--out", help="results directory")
    p.add_argument("--channel-prep", help="state-preparation noise channel (JSON)")
    p.add_argument("--channel-meas", help="measurement noise channel (JSON)")
    if protocol == "BRB":
        p.add_argument("--n", type=int, default=2, help="number of qubits")
        p.add_argument("--channel-gate", help="gate noise channel (JSON)")
    else:
        p.set_defaults(n=2)
        p.add_argument("--channel-g", help="Z-gate noise channel (JSON)")
        p.add_argument("--channel-c", help="CX noise channel (JSON)")
        p.add_argument("--channel-cprime", help="C' noise channel (JSON)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="biasrb", description="Bias randomized benchmarking simulations.")
    parser.add_argument("--version", action="version", version=f"biasrb {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-channel", help="draw a random biased Kraus channel")
    p.add_argument("--n", type=int, default=2, help="number of qubits")
    p.add_argument("--pd", type=float, required=True, help="target dephasing probability")
    p.add_argument("--pnd", type=float, required=True, help="target non-dephasing probability")
    p.add_argument("--d", type=int, required=True, help="number of Kraus operators")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="channel.json")
    p.set_defaults(func=cmd_gen_channel)

    p = sub.add_parser("simulate-brb", help="simulate CX-dihedral bias RB")
    _add_sim_args(p, "BRB")
    p.set_defaults(func=cmd_simulate_brb)

    p = sub.add_parser("simulate-ibrb", help="simulate interleaved bias RB")
    _add_sim_args(p, "IBRB")
    p.set_defaults(func=cmd_simulate_ibrb)

    p = sub.add_parser("analyze", help="fit a results directory")
    p.add_argument("results", help="directory written by simulate-brb/simulate-ibrb")
    p.add_argument("--resamples", type=int, default=50)
    p.add_argument("--seed", type=int, help="bootstrap seed (default: the simulation seed)")
    p.add_argument("--out", help="report path (default: <results>/report.json)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="many-channel simulated study")
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--protocol", choices=("BRB", "IBRB"), default="BRB")
    p.add_argument("--channels", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shots", type=int, help="measurements per (b, n) point")
    p.add_argument("--sequences", type=int, default=DEFAULT_SEQUENCES)
    p.add_argument("--lengths", type=int, nargs="+")
    p.add_argument("--resamples", type=int, default=50)
    p.add_argument("--out", help="output directory")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the invariant suite")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "command", None) in ("simulate-brb", "simulate-ibrb") and not args.config and args.seed is None:
            raise UsageError("--seed is required (or a config with a seed)")
        return args.func(args)
    except UsageError as exc:
        print(f"biasrb: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FitError, BootstrapError, ChannelGenerationError, TracePreservationError, np.linalg.LinAlgError) as exc:
        print(f"biasrb: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
