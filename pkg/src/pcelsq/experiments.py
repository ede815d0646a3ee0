"""
Reproduction studies: coherence sweeps, manufactured-function recovery,
the surface-reaction ODE, and two statistical checks of the recovery theory
(spectral concentration of the stability matrix, truncation-error envelope).

Replications are keyed by (seed, stream) random streams, so results do not
depend on evaluation order or on the ``jobs`` worker count.
"""

from __future__ import annotations

import configparser
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .basis import PcBasis, tensor_rule
from .coherence import CoherenceReport, estimate_coherence, spectral_stability
from .errors import InputError, NumericalError, PceError
from .regression import (
    DesignSystem, NoiseModel, apply_noise, relative_error, solve,
)
from .sampling import (
    COHERENCE_OPTIMAL, STRATEGY_KINDS, McmcConfig, SamplingStrategy, check_strategy_kind, draw,
    make_rng, weight_normalization,
)

# stream tags; a replication's stream is (tag, [strategy index,] replication)
STREAM_COEF = 1
STREAM_SAMPLE = 2
STREAM_NOISE = 3
STREAM_PROBE = 4
STREAM_TAIL = 5

# independent short chains: no repeated states in small designs
EXPERIMENT_MCMC = McmcConfig(restart=True, restart_steps=50)

DEFAULT_GRID_FACTORS = (1.0, 1.1, 1.25, 1.5, 2.0, 3.0, 4.0)


def strategy_for(kind: str, mcmc: Optional[McmcConfig] = None) -> SamplingStrategy:
    kind = check_strategy_kind(kind)
    if kind == COHERENCE_OPTIMAL:
        return SamplingStrategy(kind, mcmc or EXPERIMENT_MCMC)
    return SamplingStrategy(kind)


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# manufactured functions

@dataclass(frozen=True)
class RecoveryConfig:
    family: str
    d: int
    p: int
    strategies: tuple = STRATEGY_KINDS
    n_grid: tuple = ()
    replications: int = 50
    noise: NoiseModel = field(default_factory=NoiseModel)
    threshold: float = 0.02
    seed: int = 0
    mcmc: McmcConfig = EXPERIMENT_MCMC

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(check_strategy_kind(s) for s in self.strategies))
        grid = tuple(int(n) for n in self.n_grid) or default_n_grid(math.comb(self.p + self.d, self.d))
        if any(n < 1 for n in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise InputError(f"N grid must be positive and strictly ascending, got {grid}")
        object.__setattr__(self, "n_grid", grid)
        if self.replications < 1:
            raise InputError(f"replications must be >= 1, got {self.replications}")
        if not self.strategies:
            raise InputError("at least one sampling strategy is required")


def default_n_grid(P: int, factors: Sequence[float] = DEFAULT_GRID_FACTORS) -> tuple:
    grid = sorted({max(1, int(round(f * P))) for f in factors})
    return tuple(grid)


@dataclass
class RecoveryTable:
    config: RecoveryConfig
    P: int
    # strategy -> (replications, len(n_grid)) boolean successes
    outcomes: dict

    CSV_FIELDS = ("family", "strategy", "d", "p", "P", "N", "noise_sigma", "replications",
                  "success_prob")

    def success_probability(self, strategy: str) -> np.ndarray:
        return self.outcomes[strategy].mean(axis=0)

    def rows(self) -> list[dict]:
        cfg = self.config
        sigma = cfg.noise.sigma_rel if cfg.noise.active else 0.0
        out = []
        for s in cfg.strategies:
            probs = self.success_probability(s)
            for N, prob in zip(cfg.n_grid, probs):
                out.append({
                    "family": cfg.family, "strategy": s, "d": cfg.d, "p": cfg.p, "P": self.P,
                    "N": N, "noise_sigma": sigma, "replications": cfg.replications,
                    "success_prob": float(prob),
                })
        return out


def _recovery_replication(args):
    cfg, rep = args
    basis = PcBasis.total_order(cfg.family, cfg.d, cfg.p)
    n_max = cfg.n_grid[-1]
    c = make_rng(cfg.seed, (STREAM_COEF, rep)).standard_normal(basis.P)
    noise_z = make_rng(cfg.seed, (STREAM_NOISE, rep)).standard_normal(n_max)
    out = np.zeros((len(cfg.strategies), len(cfg.n_grid)), dtype=bool)
    for si, kind in enumerate(cfg.strategies):
        strategy = strategy_for(kind, cfg.mcmc)
        try:
            batch = draw(basis, strategy, n_max, cfg.seed, stream=(STREAM_SAMPLE, si, rep))
        except PceError:
            continue
        psi = basis.evaluate(batch.points)
        u = psi @ c
        if cfg.noise.active:
            u = u + cfg.noise.sigma_rel * np.abs(u) * noise_z
        A = psi * batch.weights[:, None]
        b = u * batch.weights
        for j, N in enumerate(cfg.n_grid):
            try:
                fit = solve(DesignSystem(A[:N], b[:N]), stability=False)
                out[si, j] = relative_error(fit.coefficients, c) <= cfg.threshold
            except (PceError, np.linalg.LinAlgError, ValueError):
                out[si, j] = False
    return out


def manufactured_recovery(config: RecoveryConfig, jobs: int = 1) -> RecoveryTable:
    """Success probability of recovering random standard-normal coefficients.

    Per replication the function is u = Psi c exactly (optionally with
    relative Gaussian noise); each strategy draws one batch of max(N) points
    and smaller N use its prefix, so curves are paired across N.
    """
    P = math.comb(config.p + config.d, config.d)
    results = _map(_recovery_replication, [(config, r) for r in range(config.replications)], jobs)
    stacked = np.stack(results)  # (reps, strategies, grid)
    outcomes = {s: stacked[:, i, :] for i, s in enumerate(config.strategies)}
    return RecoveryTable(config, P, outcomes)


def paired_at_least(better: np.ndarray, worse: np.ndarray, n_std: float = 2.0) -> np.ndarray:
    """Per grid column: mean(better - worse) >= -n_std * standard error of the paired difference."""
    diff = better.astype(float) - worse.astype(float)
    reps = diff.shape[0]
    se = diff.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros(diff.shape[1])
    return diff.mean(axis=0) >= -n_std * se


# ---------------------------------------------------------------------------
# surface reaction model

@dataclass(frozen=True)
class SurfaceReactionParams:
    alpha: float
    gamma: float
    kappa: float = 10.0
    rho0: float = 0.9
    t_end: float = 4.0
    step: float = 1e-3

    def __post_init__(self):
        if min(self.alpha, self.gamma, self.kappa) < 0:
            raise InputError("reaction rates alpha, gamma, kappa must be non-negative")
        if not 0.0 <= self.rho0 <= 1.0:
            raise InputError(f"rho0 must lie in [0, 1], got {self.rho0}")
        if self.t_end < 0 or not self.step > 0:
            raise InputError(f"need t_end >= 0 and step > 0, got t_end={self.t_end}, step={self.step}")


def reaction_rhs(rho, alpha, gamma, kappa):
    one_minus = 1.0 - rho
    return alpha * one_minus - gamma * rho - kappa * one_minus * one_minus * rho


def rk4_reaction(alpha, gamma, kappa=10.0, rho0=0.9, t_end=4.0, step=1e-3, *,
                 return_extremes: bool = False):
    """Classical RK4 with a fixed step, vectorized over parameter arrays.

    The last step is shortened so the integration ends exactly at t_end.
    With ``return_extremes`` also returns the min and max state seen.
    """
    alpha = np.asarray(alpha, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    rho = np.broadcast_to(np.asarray(rho0, dtype=float), np.broadcast(alpha, gamma, kappa).shape).copy()
    lo, hi = rho.copy(), rho.copy()
    n_full = int(math.floor(t_end / step + 1e-9))
    steps = [step] * n_full
    rem = t_end - n_full * step
    if rem > 1e-12 * max(1.0, t_end):
        steps.append(rem)
    for h in steps:
        k1 = reaction_rhs(rho, alpha, gamma, kappa)
        k2 = reaction_rhs(rho + 0.5 * h * k1, alpha, gamma, kappa)
        k3 = reaction_rhs(rho + 0.5 * h * k2, alpha, gamma, kappa)
        k4 = reaction_rhs(rho + h * k3, alpha, gamma, kappa)
        rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if return_extremes:
            np.minimum(lo, rho, out=lo)
            np.maximum(hi, rho, out=hi)
    if not np.all(np.isfinite(rho)):
        raise NumericalError("surface reaction integration produced a non-finite state")
    if return_extremes:
        return rho, lo, hi
    return rho


def surface_reaction_qoi(params: SurfaceReactionParams) -> float:
    """rho(t_end) by fixed-step RK4."""
    return float(rk4_reaction(params.alpha, params.gamma, params.kappa, params.rho0,
                              params.t_end, params.step))


def surface_reaction_reference(params: SurfaceReactionParams, tol: float = 1e-12) -> float:
    """Adaptive embedded RK 4(5) solution, used only as an accuracy oracle."""
    if params.t_end == 0:
        return params.rho0
    sol = solve_ivp(
        lambda t, y: reaction_rhs(y, params.alpha, params.gamma, params.kappa),
        (0.0, params.t_end), [params.rho0], method="RK45", rtol=tol, atol=tol * 1e-2,
    )
    if not sol.success:
        raise NumericalError(f"adaptive oracle failed: {sol.message}")
    return float(sol.y[0, -1])


def surface_reaction_inputs(xi) -> SurfaceReactionParams:
    """Shifted log-normal rates from a standard-normal input pair."""
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.shape != (2,):
        raise InputError(f"surface reaction input must have 2 coordinates, got {xi.shape}")
    return SurfaceReactionParams(alpha=0.1 + math.exp(0.05 * xi[0]),
                                 gamma=0.001 + 0.01 * math.exp(0.05 * xi[1]))


def surface_reaction_field(points, step: float = 1e-3, t_end: float = 4.0) -> np.ndarray:
    """rho(t_end) at each row of an (n, 2) array of standard-normal inputs."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != 2:
        raise InputError(f"surface reaction inputs must be (n, 2), got {pts.shape}")
    alpha = 0.1 + np.exp(0.05 * pts[:, 0])
    gamma = 0.001 + 0.01 * np.exp(0.05 * pts[:, 1])
    return rk4_reaction(alpha, gamma, 10.0, 0.9, t_end, step)


def quadrature_reference(basis: PcBasis, qoi: Callable, n_per_dim: int,
                         budget: int = 2_000_000) -> np.ndarray:
    """Projection coefficients sum_q qoi(x_q) psi_k(x_q) w_q on a tensor Gauss rule.

    ``qoi`` maps an (n, d) array of nodes to n values.
    """
    if n_per_dim < basis.p + 1:
        raise InputError(f"n_per_dim={n_per_dim} is below p + 1 = {basis.p + 1}")
    nodes, weights = tensor_rule(basis.family, n_per_dim, basis.d, budget)
    values = np.asarray(qoi(nodes), dtype=float)
    if values.shape != (nodes.shape[0],):
        raise InputError(f"qoi returned shape {values.shape}, expected ({nodes.shape[0]},)")
    return basis.evaluate(nodes).T @ (weights * values)


# ---------------------------------------------------------------------------
# ODE study

ODE_P_ORDER = 32


@dataclass
class OdeTable:
    strategies: tuple
    n_grid: tuple
    replications: int
    # strategy -> (replications, len(n_grid)) arrays
    rel_rmse: dict
    rank_deficient: dict

    CSV_FIELDS = ("strategy", "N", "replications", "mean_rel_rmse", "std_rel_rmse",
                  "rank_deficient_fraction")

    def mean(self, strategy: str) -> np.ndarray:
        return self.rel_rmse[strategy].mean(axis=0)

    def std(self, strategy: str) -> np.ndarray:
        ddof = 1 if self.replications > 1 else 0
        return self.rel_rmse[strategy].std(axis=0, ddof=ddof)

    def rows(self) -> list[dict]:
        out = []
        for s in self.strategies:
            mean, std = self.mean(s), self.std(s)
            frac = self.rank_deficient[s].mean(axis=0)
            for j, N in enumerate(self.n_grid):
                out.append({
                    "strategy": s, "N": N, "replications": self.replications,
                    "mean_rel_rmse": float(mean[j]), "std_rel_rmse": float(std[j]),
                    "rank_deficient_fraction": float(frac[j]),
                })
        return out


def ode_reference_coefficients(p: int = ODE_P_ORDER, n_per_dim: int = 100,
                               step: float = 1e-3) -> np.ndarray:
    basis = PcBasis.total_order("hermite", 2, p)
    return quadrature_reference(basis, lambda x: surface_reaction_field(x, step), n_per_dim)


def _ode_replication(args):
    strategies, n_grid, seed, rep, p, step, mcmc, c_ref = args
    basis = PcBasis.total_order("hermite", 2, p)
    errs = np.full((len(strategies), len(n_grid)), np.nan)
    deficient = np.zeros((len(strategies), len(n_grid)), dtype=bool)
    for si, kind in enumerate(strategies):
        strategy = strategy_for(kind, mcmc)
        batch = draw(basis, strategy, n_grid[-1], seed, stream=(STREAM_SAMPLE, si, rep))
        u = surface_reaction_field(batch.points, step)
        A = basis.evaluate(batch.points) * batch.weights[:, None]
        b = u * batch.weights
        for j, N in enumerate(n_grid):
            try:
                fit = solve(DesignSystem(A[:N], b[:N]), stability=False)
            except (PceError, np.linalg.LinAlgError, ValueError):
                deficient[si, j] = True
                continue
            errs[si, j] = relative_error(fit.coefficients, c_ref)
            deficient[si, j] = fit.rank_deficient
    return errs, deficient


def ode_study(strategies=STRATEGY_KINDS, n_grid=(700, 1000, 1300), replications: int = 50,
              seed: int = 0, *, p: int = ODE_P_ORDER, step: float = 1e-3, n_quad: int = 100,
              reference: Optional[np.ndarray] = None, mcmc: Optional[McmcConfig] = None,
              jobs: int = 1) -> tuple[OdeTable, np.ndarray]:
    """Relative coefficient-space RMSE of the Hermite fit to rho(4) versus N.

    Returns the table and the quadrature reference coefficients.
    """
    strategies = tuple(check_strategy_kind(s) for s in strategies)
    n_grid = tuple(int(n) for n in n_grid)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise InputError(f"N grid must be strictly ascending, got {n_grid}")
    if replications < 1:
        raise InputError(f"replications must be >= 1, got {replications}")
    c_ref = ode_reference_coefficients(p, n_quad, step) if reference is None else np.asarray(reference)
    args = [(strategies, n_grid, seed, r, p, step, mcmc, c_ref) for r in range(replications)]
    results = _map(_ode_replication, args, jobs)
    errs = np.stack([r[0] for r in results])
    defs = np.stack([r[1] for r in results])
    table = OdeTable(
        strategies, n_grid, replications,
        {s: errs[:, i, :] for i, s in enumerate(strategies)},
        {s: defs[:, i, :] for i, s in enumerate(strategies)},
    )
    return table, c_ref


# ---------------------------------------------------------------------------
# coherence sweep

def coherence_sweep(families, strategies, d_grid, p_grid, n_probe: int, seed: int = 0, *,
                    mcmc: Optional[McmcConfig] = None) -> list[CoherenceReport]:
    """One coherence estimate per (family, strategy, d, p).

    The probe stream depends on (family, strategy, d) only, so at fixed d the
    standard-sampling probes are shared across p and the estimates nest.
    """
    families = list(families)
    strategies = [check_strategy_kind(s) for s in strategies]
    if not (families and strategies and list(d_grid) and list(p_grid)):
        raise InputError("coherence sweep grids must be non-empty")
    reports = []
    for fi, family in enumerate(families):
        for si, kind in enumerate(strategies):
            for d in d_grid:
                for p in p_grid:
                    basis = PcBasis.total_order(family, d, p)
                    strategy = strategy_for(kind, mcmc)
                    if kind == "asymptotic" and family == "hermite" and p < 1:
                        strategy = SamplingStrategy("standard")
                    rep = estimate_coherence(basis, strategy, n_probe, seed,
                                             stream=(STREAM_PROBE, fi, si, d))
                    reports.append(replace(rep, strategy=kind))
    return reports


# ---------------------------------------------------------------------------
# statistical checks of the recovery theory

@dataclass
class StabilityStudy:
    N: int
    replications: int
    sigmas: np.ndarray

    @property
    def unstable_fraction(self) -> float:
        return float(np.mean(self.sigmas > 0.5))


def stability_study(basis: PcBasis, strategy, N: int, replications: int, seed: int = 0,
                    jobs: int = 1) -> StabilityStudy:
    """Distribution of sigma = ||M - I|| over independent sample batches."""
    strategy = SamplingStrategy.of(strategy)
    scale = weight_normalization(basis, strategy)
    sigmas = np.empty(replications)
    for r in range(replications):
        batch = draw(basis, strategy, N, seed, stream=(STREAM_SAMPLE, r))
        A = basis.evaluate(batch.points) * batch.weights[:, None]
        sigmas[r] = spectral_stability(DesignSystem(A, np.zeros(N), scale))[0]
    return StabilityStudy(N, replications, sigmas)


@dataclass
class TruncationStudy:
    P_fit: int
    N: int
    eps2: float
    attempts: int
    # squared L2 errors ||u - u_hat||^2 of stable replications
    stable_errors: np.ndarray

    @property
    def stable_replications(self) -> int:
        return self.stable_errors.shape[0]

    @property
    def conditional_mean(self) -> float:
        return float(self.stable_errors.mean())

    @property
    def restricted_mean(self) -> float:
        return float(self.stable_errors.sum() / self.attempts)


def truncation_study(family: str = "legendre", d: int = 2, p_fit: int = 2, p_true: int = 4,
                     tail_energy: float = 1.0, N: Optional[int] = None,
                     stable_replications: int = 200, seed: int = 0,
                     strategy: Optional[SamplingStrategy] = None,
                     max_attempts: Optional[int] = None) -> TruncationStudy:
    """Fit the order-p_fit part of an order-p_true expansion with known tail energy.

    Replications run until ``stable_replications`` have sigma <= 1/2; the
    unstable ones are excluded, as in the event the error bound is stated on.
    The squared L2 error is ||c_hat - c_head||^2 + tail_energy by orthonormality.
    """
    if p_true <= p_fit:
        raise InputError("the target must have terms beyond the fitted order")
    fit_basis = PcBasis.total_order(family, d, p_fit)
    full_basis = PcBasis.total_order(family, d, p_true)
    P_fit = fit_basis.P
    N = 10 * P_fit if N is None else int(N)
    strategy = strategy or strategy_for(COHERENCE_OPTIMAL)
    scale = weight_normalization(fit_basis, strategy)
    max_attempts = max_attempts or 10 * stable_replications
    errors = []
    attempts = 0
    while len(errors) < stable_replications and attempts < max_attempts:
        rep = attempts
        attempts += 1
        rng = make_rng(seed, (STREAM_TAIL, rep))
        c_head = rng.standard_normal(P_fit)
        tail = rng.standard_normal(full_basis.P - P_fit)
        tail *= math.sqrt(tail_energy) / np.linalg.norm(tail)
        c_full = np.concatenate([c_head, tail])
        batch = draw(fit_basis, strategy, N, seed, stream=(STREAM_SAMPLE, rep))
        u = full_basis.evaluate(batch.points) @ c_full
        A = fit_basis.evaluate(batch.points) * batch.weights[:, None]
        design = DesignSystem(A, u * batch.weights, scale)
        fit = solve(design)
        if not fit.stable:
            continue
        errors.append(float(np.sum((fit.coefficients - c_head) ** 2)) + tail_energy)
    return TruncationStudy(P_fit, N, tail_energy, attempts, np.asarray(errors))


# ---------------------------------------------------------------------------
# config files

def load_recovery_config(path) -> RecoveryConfig:
    """Read a recovery config from an INI file.

    Schema (section ``[recovery]``)::

        family = hermite | legendre
        d = INT
        p = INT
        strategies = standard, asymptotic, coherence-optimal
        n_grid = INT, INT, ...          ; optional, default multiples of P
        replications = INT
        noise_sigma = FLOAT             ; optional, 0 disables noise
        threshold = FLOAT
        seed = INT

    An optional ``[mcmc]`` section takes burn_in, thinning, proposal,
    restart (true/false) and restart_steps.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not parser.read(path):
        raise InputError(f"cannot read config file {path}")
    if "recovery" not in parser:
        raise InputError(f"config {path} has no [recovery] section")
    sec = parser["recovery"]
    try:
        strategies = tuple(s.strip() for s in sec.get("strategies", ",".join(STRATEGY_KINDS)).split(",") if s.strip())
        grid = tuple(int(x) for x in sec.get("n_grid", "").split(",") if x.strip())
        sigma = sec.getfloat("noise_sigma", 0.0)
        noise = NoiseModel.relative(sigma) if sigma > 0 else NoiseModel()
        mcmc = EXPERIMENT_MCMC
        if "mcmc" in parser:
            m = parser["mcmc"]
            mcmc = McmcConfig(
                burn_in=m.getint("burn_in", EXPERIMENT_MCMC.burn_in),
                thinning=m.getint("thinning", EXPERIMENT_MCMC.thinning),
                proposal=m.get("proposal", None),
                restart=m.getboolean("restart", EXPERIMENT_MCMC.restart),
                restart_steps=m.getint("restart_steps", EXPERIMENT_MCMC.restart_steps),
            )
        return RecoveryConfig(
            family=sec.get("family"), d=sec.getint("d"), p=sec.getint("p"),
            strategies=strategies, n_grid=grid,
            replications=sec.getint("replications", 50), noise=noise,
            threshold=sec.getfloat("threshold", 0.02), seed=sec.getint("seed", 0), mcmc=mcmc,
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid recovery config {path}: {exc}") from exc
