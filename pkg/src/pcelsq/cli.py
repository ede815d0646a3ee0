"""
Command-line front end: ``pcelsq {sample,coherence,fit,recovery,ode,plan,replay}``.

Every CSV is written together with a ``<csv>.manifest`` file of ``key=value``
lines recording the command line, seed, timestamps, versions and run
diagnostics; ``pcelsq replay MANIFEST --out NEW.csv`` reruns it.

Exit codes: 0 success, 2 usage or invalid input, 1 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import platform
import shlex
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .basis import PcBasis, multi_index_labels
from .coherence import SampleSizePlan, CoherenceReport, required_samples
from .errors import InfeasibleError, InputError, NumericalError, PceError, SizeError
from .experiments import (
    EXPERIMENT_MCMC, OdeTable, RecoveryConfig, RecoveryTable, coherence_sweep,
    load_recovery_config, manufactured_recovery, ode_study,
)
from .regression import NoiseModel, assemble_weighted, solve
from .sampling import (
    COHERENCE_OPTIMAL, STRATEGY_KINDS, McmcConfig, SamplingStrategy, check_strategy_kind, draw,
    weight_normalization,
)

OUTDIR_ENV = "PCELSQ_OUTDIR"
MANIFEST_SUFFIX = ".manifest"


class UsageError(Exception):
    """Bad flags or flag combinations (exit code 2)."""


# ---------------------------------------------------------------------------
# flag parsing helpers

def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def resolve_out(path: str) -> Path:
    """Relative output paths are placed under $PCELSQ_OUTDIR when it is set."""
    out = Path(path)
    base = os.environ.get(OUTDIR_ENV)
    if base and not out.is_absolute():
        out = Path(base) / out
    return out


class Run:
    """Collects outputs and diagnostics for one command invocation."""

    def __init__(self, command: str, argv: Sequence[str], args: argparse.Namespace):
        self.command = command
        self.argv = list(argv)
        self.args = args
        self.started = datetime.now(timezone.utc)
        self.t0 = time.perf_counter()
        self.outputs: list[Path] = []
        self.figures: list[Path] = []
        self.diagnostics: dict = {}

    def target(self, path: str) -> Path:
        out = resolve_out(path)
        if out.exists() and not getattr(self.args, "overwrite", False):
            raise UsageError(f"--out: {out} already exists (outputs are write-once; pass --overwrite)")
        out.parent.mkdir(parents=True, exist_ok=True)
        return out

    def write_csv(self, path: Path, header: Sequence[str], rows) -> Path:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        self.outputs.append(path)
        return path

    def finish(self) -> None:
        finished = datetime.now(timezone.utc)
        lines = {
            "command": self.command,
            "argv": shlex.join(self.argv),
            "seed": getattr(self.args, "seed", ""),
        }
        for key, value in sorted(vars(self.args).items()):
            if key in ("func", "command"):
                continue
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines[f"flag.{key}"] = value
        lines.update({
            "started": self.started.isoformat(),
            "finished": finished.isoformat(),
            "elapsed_s": f"{time.perf_counter() - self.t0:.3f}",
            "outputs": ",".join(str(p) for p in self.outputs),
            "figures": ",".join(str(p) for p in self.figures),
            "version.pcelsq": __version__,
            "version.python": platform.python_version(),
            "version.numpy": np.__version__,
            "version.scipy": scipy.__version__,
        })
        for key, value in self.diagnostics.items():
            lines[f"diag.{key}"] = value
        text = "".join(f"{k}={_fmt(v)}\n" for k, v in lines.items())
        for out in self.outputs:
            Path(str(out) + MANIFEST_SUFFIX).write_text(text)


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key] = value
    return out


def _mcmc_from_args(args, strategy: str) -> Optional[McmcConfig]:
    given = [f for f, v in (("--burn-in", args.burn_in), ("--thin", args.thin),
                            ("--proposal", args.proposal)) if v is not None]
    if args.restart:
        given.append("--restart")
    if strategy != COHERENCE_OPTIMAL:
        if given:
            raise UsageError(f"{', '.join(given)} valid only with --strategy {COHERENCE_OPTIMAL}")
        return None
    base = McmcConfig()
    return McmcConfig(
        burn_in=base.burn_in if args.burn_in is None else args.burn_in,
        thinning=base.thinning if args.thin is None else args.thin,
        proposal=args.proposal, restart=args.restart,
    )


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise UsageError(message)


def _check_basis_flags(args) -> None:
    _require(args.d >= 1, f"--d must be >= 1, got {args.d}")
    _require(args.p >= 0, f"--p must be >= 0, got {args.p}")


# ---------------------------------------------------------------------------
# commands

def cmd_sample(args, run: Run) -> None:
    _check_basis_flags(args)
    _require(args.n >= 1, f"--n must be >= 1, got {args.n}")
    strategy_kind = check_strategy_kind(args.strategy)
    mcmc = _mcmc_from_args(args, strategy_kind)
    basis = PcBasis.total_order(args.family, args.d, args.p)
    out = run.target(args.out)
    batch = draw(basis, SamplingStrategy(strategy_kind, mcmc), args.n, args.seed)
    header = [f"x{i + 1}" for i in range(args.d)] + ["weight"]
    rows = (list(pt) + [w] for pt, w in zip(batch.points.tolist(), batch.weights.tolist()))
    run.write_csv(out, header, rows)
    run.diagnostics.update({
        "family": basis.family, "strategy": strategy_kind, "d": basis.d, "p": basis.p, "P": basis.P,
        "weight_scale": weight_normalization(basis, batch.strategy),
        "acceptance_rate": batch.acceptance_rate, "lag1_autocorr": batch.lag1_autocorr,
    })
    if mcmc is not None:
        run.diagnostics.update({
            "mcmc.burn_in": mcmc.burn_in, "mcmc.thinning": mcmc.thinning,
            "mcmc.proposal": batch.extra.get("proposal"), "mcmc.restart": mcmc.restart,
        })
    if args.plot:
        from .plotting import plot_samples
        run.figures.append(plot_samples(batch.points, out))


def cmd_coherence(args, run: Run) -> None:
    _require(all(d >= 1 for d in args.d), "--d values must be >= 1")
    _require(all(p >= 0 for p in args.p), "--p values must be >= 0")
    _require(args.n_probe >= 1, f"--n-probe must be >= 1, got {args.n_probe}")
    strategies = [check_strategy_kind(s) for s in args.strategies]
    out = run.target(args.out)
    reports = coherence_sweep(args.families, strategies, args.d, args.p, args.n_probe, args.seed)
    fields = CoherenceReport.CSV_FIELDS
    run.write_csv(out, fields, ([r.as_row()[f] for f in fields] for r in reports))
    if args.plot:
        from .plotting import plot_coherence
        run.figures.append(plot_coherence(reports, out))


def _read_samples(path):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"--samples: file {path} not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        data = [row for row in reader if row]
    if header is None:
        raise UsageError(f"--samples: {path} is empty")
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    if "weight" not in header or "u" not in header or not xcols:
        raise UsageError(f"--samples: {path} needs columns x1..xd,weight,u; found {header}")
    try:
        arr = np.array(data, dtype=float)
    except ValueError as exc:
        raise UsageError(f"--samples: non-numeric entry in {path}: {exc}")
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise UsageError(f"--samples: {path} has no data rows")
    points = arr[:, xcols]
    return points, arr[:, header.index("weight")], arr[:, header.index("u")]


def cmd_fit(args, run: Run) -> None:
    _require(args.p >= 0, f"--p must be >= 0, got {args.p}")
    points, weights, values = _read_samples(args.samples)
    d = points.shape[1]
    if args.d is not None:
        _require(args.d == d, f"--d {args.d} does not match the {d} x-columns of {args.samples}")
    basis = PcBasis.total_order(args.family, d, args.p)
    scale = 1.0
    if args.strategy is not None:
        scale = weight_normalization(basis, SamplingStrategy(check_strategy_kind(args.strategy)))
    out = run.target(args.out)
    design = assemble_weighted(basis, points, weights, values, scale)
    fit = solve(design, args.method)
    header = list(multi_index_labels(d)) + ["c_hat"]
    run.write_csv(out, header, (list(k) + [c] for k, c in zip(basis.indices.tolist(), fit.coefficients.tolist())))
    diag = {
        "N": design.N, "P": design.P, "method": fit.method, "rank": fit.rank,
        "rank_deficient": fit.rank_deficient, "residual_norm": fit.residual_norm,
        "sigma_stability": fit.sigma_stability, "stable": fit.stable, "weight_scale": scale,
    }
    run.diagnostics.update(diag)
    for key, value in diag.items():
        print(f"{key}={_fmt(value)}", file=sys.stderr)


def _recovery_config(args) -> RecoveryConfig:
    if args.config:
        if not Path(args.config).exists():
            raise UsageError(f"--config: file {args.config} not found")
        return load_recovery_config(args.config)
    missing = [f for f, v in (("--family", args.family), ("--d", args.d), ("--p", args.p)) if v is None]
    _require(not missing, f"recovery needs {', '.join(missing)} (or --config)")
    _check_basis_flags(args)
    _require(args.reps >= 1, f"--reps must be >= 1, got {args.reps}")
    _require(args.noise_sigma >= 0, f"--noise-sigma must be >= 0, got {args.noise_sigma}")
    noise = NoiseModel.relative(args.noise_sigma) if args.noise_sigma > 0 else NoiseModel()
    return RecoveryConfig(
        family=args.family, d=args.d, p=args.p, strategies=args.strategies,
        n_grid=args.n_grid or (), replications=args.reps, noise=noise,
        threshold=args.threshold, seed=args.seed,
    )


def cmd_recovery(args, run: Run) -> None:
    _require(args.jobs >= 1, f"--jobs must be >= 1, got {args.jobs}")
    config = _recovery_config(args)
    out = run.target(args.out)
    table = manufactured_recovery(config, jobs=args.jobs)
    run.write_csv(out, RecoveryTable.CSV_FIELDS,
                  ([r[f] for f in RecoveryTable.CSV_FIELDS] for r in table.rows()))
    run.diagnostics.update({"P": table.P, "mcmc.restart": config.mcmc.restart,
                            "mcmc.restart_steps": config.mcmc.restart_steps})
    if args.plot:
        from .plotting import plot_recovery
        run.figures.append(plot_recovery(table, out))


def cmd_ode(args, run: Run) -> None:
    _require(args.reps >= 1, f"--reps must be >= 1, got {args.reps}")
    _require(args.jobs >= 1, f"--jobs must be >= 1, got {args.jobs}")
    _require(args.p >= 0, f"--p must be >= 0, got {args.p}")
    _require(args.step > 0, f"--step must be positive, got {args.step}")
    _require(args.n_quad >= args.p + 1, f"--n-quad must be >= p + 1 = {args.p + 1}, got {args.n_quad}")
    _require(bool(args.n_grid) and all(n >= 1 for n in args.n_grid), "--n-grid needs positive integers")
    out = run.target(args.out)
    ref_out = run.target(str(Path(args.out).with_name(Path(args.out).stem + "_reference.csv")))
    table, c_ref = ode_study(args.strategies, args.n_grid, args.reps, args.seed, p=args.p,
                             step=args.step, n_quad=args.n_quad, jobs=args.jobs)
    run.write_csv(out, OdeTable.CSV_FIELDS,
                  ([r[f] for f in OdeTable.CSV_FIELDS] for r in table.rows()))
    basis = PcBasis.total_order("hermite", 2, args.p)
    run.write_csv(ref_out, ["k1", "k2", "c_ref"],
                  (list(k) + [c] for k, c in zip(basis.indices.tolist(), c_ref.tolist())))
    run.diagnostics.update({"P": basis.P, "mcmc.restart": EXPERIMENT_MCMC.restart,
                            "mcmc.restart_steps": EXPERIMENT_MCMC.restart_steps})
    if args.plot:
        from .plotting import plot_coefficients, plot_ode
        run.figures.append(plot_ode(table, out))
        run.figures.append(plot_coefficients(c_ref, ref_out))


def cmd_plan(args, run: Run) -> None:
    plan = SampleSizePlan(P=args.P, nu=args.nu, tau=args.tau, rho=args.rho, eps2=args.eps2,
                          epsM2=args.epsM2, bounded_coherence=not args.truncated)
    N = required_samples(plan)
    header = ["P", "nu", "tau", "rho", "eps2", "epsM2", "truncated", "N"]
    row = [plan.P, plan.nu, plan.tau, plan.rho, plan.eps2, plan.epsM2, args.truncated, N]
    if args.out:
        run.write_csv(run.target(args.out), header, [row])
    print(N)


def cmd_replay(args, run: Run) -> None:
    manifest = read_manifest(args.manifest)
    if "argv" not in manifest:
        raise UsageError(f"--manifest: {args.manifest} has no argv entry")
    argv = shlex.split(manifest["argv"])
    if args.out:
        argv = _replace_flag(argv, "--out", args.out)
    if args.overwrite and "--overwrite" not in argv:
        argv.append("--overwrite")
    run.diagnostics["replayed"] = args.manifest
    raise _Replay(argv)


class _Replay(Exception):
    def __init__(self, argv):
        self.argv = argv


def _replace_flag(argv: list, flag: str, value: str) -> list:
    out = []
    skip = False
    for i, tok in enumerate(argv):
        if skip:
            skip = False
            continue
        if tok == flag:
            skip = True
            continue
        if tok.startswith(flag + "="):
            continue
        out.append(tok)
    return out + [flag, value]


# ---------------------------------------------------------------------------
# parser

def _add_common(p: argparse.ArgumentParser, *, seed=True, out_required=True, plot=True) -> None:
    if seed:
        p.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")
    p.add_argument("--out", required=out_required, help="output CSV path")
    p.add_argument("--overwrite", action="store_true", help="allow replacing an existing output")
    if plot:
        p.add_argument("--plot", action="store_true", help="also render a PNG next to the CSV")


def _add_mcmc(p: argparse.ArgumentParser) -> None:
    p.add_argument("--burn-in", type=int, default=None, help="MCMC burn-in (coherence-optimal only)")
    p.add_argument("--thin", type=int, default=None, help="MCMC thinning (coherence-optimal only)")
    p.add_argument("--proposal", choices=("standard", "asymptotic"), default=None,
                   help="MCMC proposal (default: standard if p <= d, else asymptotic)")
    p.add_argument("--restart", action="store_true",
                   help="one short independent chain per sample instead of a single chain")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcelsq", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    families = ("hermite", "legendre")

    p = sub.add_parser("sample", help="draw a weighted sample")
    p.add_argument("--family", choices=families, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--strategy", choices=STRATEGY_KINDS, required=True)
    p.add_argument("--n", type=int, required=True, help="number of samples")
    _add_mcmc(p)
    _add_common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("coherence", help="estimate coherence over a (family, strategy, d, p) grid")
    p.add_argument("--families", "--family", type=_str_list, default=families)
    p.add_argument("--strategies", "--strategy", type=_str_list, default=STRATEGY_KINDS)
    p.add_argument("--d", type=_int_list, required=True, help="comma-separated dimensions")
    p.add_argument("--p", type=_int_list, required=True, help="comma-separated orders")
    p.add_argument("--n-probe", type=int, default=100_000)
    _add_common(p)
    p.set_defaults(func=cmd_coherence)

    p = sub.add_parser("fit", help="weighted least-squares fit from an x1..xd,weight,u CSV")
    p.add_argument("--samples", required=True)
    p.add_argument("--family", choices=families, required=True)
    p.add_argument("--d", type=int, default=None, help="input dimension (default: from the CSV)")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--strategy", choices=STRATEGY_KINDS, default=None,
                   help="strategy that produced the weights (sets the stability-matrix scale)")
    p.add_argument("--method", choices=("auto", "qr", "min-norm-svd", "lsqr"), default="auto")
    _add_common(p, seed=False, plot=False)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("recovery", help="manufactured-function recovery probability curves")
    p.add_argument("--config", default=None, help="INI config; replaces the study flags below")
    p.add_argument("--family", choices=families, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--strategies", type=_str_list, default=STRATEGY_KINDS)
    p.add_argument("--n-grid", type=_int_list, default=None, help="default: multiples of P up to 4P")
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--noise-sigma", type=float, default=0.0, help="relative Gaussian noise level")
    p.add_argument("--threshold", type=float, default=0.02)
    p.add_argument("--jobs", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_recovery)

    p = sub.add_parser("ode", help="surface-reaction ODE study")
    p.add_argument("--strategies", type=_str_list, default=STRATEGY_KINDS)
    p.add_argument("--n-grid", type=_int_list, default=(700, 1000, 1300))
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--p", type=int, default=32)
    p.add_argument("--n-quad", type=int, default=100, help="Gauss-Hermite points per dimension")
    p.add_argument("--step", type=float, default=1e-3, help="RK4 step")
    p.add_argument("--jobs", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_ode)

    p = sub.add_parser("plan", help="required number of samples")
    p.add_argument("--P", type=int, required=True)
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=math.inf)
    p.add_argument("--rho", type=float, default=0.99)
    p.add_argument("--eps2", type=float, default=0.0)
    p.add_argument("--epsM2", type=float, default=0.0)
    p.add_argument("--truncated", action="store_true", help="truncated-coherence form (adds 1/P)")
    _add_common(p, seed=False, out_required=False, plot=False)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="write to this path instead of the recorded one")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    for _ in range(2):  # a replay resolves to exactly one recorded command
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        run = Run(args.command, argv, args)
        try:
            args.func(args, run)
        except _Replay as replay:
            if args.command == "replay" and replay.argv and replay.argv[0] != "replay":
                argv = replay.argv
                continue
            print("pcelsq: error: manifest does not record a runnable command", file=sys.stderr)
            return 2
        except (UsageError, InputError, SizeError, InfeasibleError) as exc:
            print(f"pcelsq {args.command}: error: {exc}", file=sys.stderr)
            return 2
        except (NumericalError, PceError, np.linalg.LinAlgError, ArithmeticError) as exc:
            print(f"pcelsq {args.command}: numerical failure: {exc}", file=sys.stderr)
            return 1
        run.finish()
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
