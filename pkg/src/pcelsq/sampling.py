"""
Weighted input sampling: standard, asymptotic, and coherence-optimal.

Every sampler draws from a ``numpy.random.Generator`` built from
``SeedSequence(seed, spawn_key=stream)``, so replications indexed by
``stream`` get independent, order-free random streams.

Weights are un-normalized (no density normalizing constant).  The constant
that turns them into probability-normalized weights is available from
:func:`weight_normalization`; least-squares solutions do not depend on it,
but the stability matrix and coherence estimates do.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import PcBasis
from .errors import InputError

STANDARD = "standard"
ASYMPTOTIC = "asymptotic"
COHERENCE_OPTIMAL = "coherence-optimal"
STRATEGY_KINDS = (STANDARD, ASYMPTOTIC, COHERENCE_OPTIMAL)
PROPOSALS = (STANDARD, ASYMPTOTIC)

MIN_ACCEPTANCE = 0.01


def make_rng(seed: int, stream: tuple[int, ...] = ()) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(stream)))


def check_strategy_kind(kind: str) -> str:
    k = str(kind).lower().replace("_", "-")
    if k == "coherence":
        k = COHERENCE_OPTIMAL
    if k not in STRATEGY_KINDS:
        raise InputError(f"unknown sampling strategy {kind!r}; expected one of {STRATEGY_KINDS}")
    return k


@dataclass(frozen=True)
class McmcConfig:
    """Independence Metropolis-Hastings settings.

    ``proposal=None`` picks the standard proposal when p <= d and the
    asymptotic one otherwise.  ``restart=True`` replaces the single thinned
    chain by one independent chain of ``restart_steps`` steps per kept
    sample: fully independent draws, and no repeated states.
    """

    burn_in: int = 1000
    thinning: int = 10
    proposal: Optional[str] = None
    restart: bool = False
    restart_steps: int = 50

    def __post_init__(self):
        if self.burn_in < 0:
            raise InputError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.thinning < 1:
            raise InputError(f"thinning must be >= 1, got {self.thinning}")
        if self.restart_steps < 1:
            raise InputError(f"restart_steps must be >= 1, got {self.restart_steps}")
        if self.proposal is not None:
            prop = check_strategy_kind(self.proposal)
            if prop not in PROPOSALS:
                raise InputError(f"MCMC proposal must be one of {PROPOSALS}, got {self.proposal!r}")
            object.__setattr__(self, "proposal", prop)

    def resolved_proposal(self, basis: PcBasis) -> str:
        if self.proposal is not None:
            return self.proposal
        return STANDARD if basis.p <= basis.d else ASYMPTOTIC


@dataclass(frozen=True)
class SamplingStrategy:
    kind: str
    mcmc: Optional[McmcConfig] = None
    # scales the Hermite ball radius sqrt(2(2p+1))
    radius_multiplier: float = 1.0

    def __post_init__(self):
        kind = check_strategy_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind == COHERENCE_OPTIMAL and self.mcmc is None:
            object.__setattr__(self, "mcmc", McmcConfig())
        if kind != COHERENCE_OPTIMAL and self.mcmc is not None:
            raise InputError(f"MCMC settings only apply to {COHERENCE_OPTIMAL!r} sampling")
        if not self.radius_multiplier > 0:
            raise InputError(f"radius_multiplier must be positive, got {self.radius_multiplier}")

    @classmethod
    def of(cls, kind) -> "SamplingStrategy":
        return kind if isinstance(kind, SamplingStrategy) else cls(kind)


@dataclass
class SampleBatch:
    points: np.ndarray
    weights: np.ndarray
    strategy: SamplingStrategy
    seed: int
    stream: tuple[int, ...] = ()
    acceptance_rate: Optional[float] = None
    lag1_autocorr: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def head(self, n: int) -> "SampleBatch":
        """The first ``n`` samples, sharing the stream (prefix coupling)."""
        return SampleBatch(
            self.points[:n], self.weights[:n], self.strategy, self.seed, self.stream,
            self.acceptance_rate, self.lag1_autocorr, dict(self.extra),
        )


def hermite_ball_radius(p: int, multiplier: float = 1.0) -> float:
    return multiplier * math.sqrt(2.0 * (2 * p + 1))


def _ball_log_volume(r: float, d: int) -> float:
    return d * math.log(r * math.sqrt(math.pi)) - math.lgamma(d / 2 + 1)


def sample_ball(d: int, r: float, N: int, seed: int = 0, *, stream=(), rng=None) -> np.ndarray:
    """N points uniform in the d-ball of radius r via Z/|Z| * r * U^(1/d)."""
    if not r > 0:
        raise InputError(f"ball radius must be positive, got r={r}")
    if d < 1 or N < 0:
        raise InputError(f"need d >= 1 and N >= 0, got d={d}, N={N}")
    rng = make_rng(seed, stream) if rng is None else rng
    z = rng.standard_normal((N, d))
    norms = np.linalg.norm(z, axis=1)
    bad = norms == 0.0
    while np.any(bad):  # measure zero
        z[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(z, axis=1)
        bad = norms == 0.0
    u = rng.random(N)
    return z / norms[:, None] * (r * u ** (1.0 / d))[:, None]


def _chebyshev_coords(rng: np.random.Generator, shape) -> np.ndarray:
    x = np.cos(np.pi * rng.random(shape))
    edge = np.abs(x) >= 1.0
    while np.any(edge):  # U in {0, 1}: zero weight, redraw
        x[edge] = np.cos(np.pi * rng.random(int(edge.sum())))
        edge = np.abs(x) >= 1.0
    return x


def _draw_base(basis: PcBasis, kind: str, n: int, rng: np.random.Generator, radius_multiplier=1.0):
    if kind == STANDARD:
        if basis.family == "hermite":
            return rng.standard_normal((n, basis.d))
        return rng.uniform(-1.0, 1.0, (n, basis.d))
    if basis.family == "hermite":
        if basis.p < 1:
            raise InputError("asymptotic Hermite sampling needs p >= 1")
        return sample_ball(basis.d, hermite_ball_radius(basis.p, radius_multiplier), n, rng=rng)
    return _chebyshev_coords(rng, (n, basis.d))


def _raw_weights(basis: PcBasis, strategy: SamplingStrategy, pts: np.ndarray) -> np.ndarray:
    kind = strategy.kind
    if kind == STANDARD:
        return np.ones(pts.shape[0])
    if kind == ASYMPTOTIC:
        if basis.family == "hermite":
            return np.exp(-np.sum(pts * pts, axis=1) / 4.0)
        return np.prod((1.0 - pts * pts) ** 0.25, axis=1)
    return 1.0 / basis.envelope(pts)


def weights_for(basis: PcBasis, strategy, points) -> np.ndarray:
    """Un-normalized weights of ``strategy`` at each row of ``points``."""
    strategy = SamplingStrategy.of(strategy)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != basis.d:
        raise InputError(f"points must have {basis.d} coordinates, got {pts.shape[1]}")
    if not np.all(np.isfinite(pts)):
        raise InputError("points must be finite")
    if basis.family == "legendre" and np.any(np.abs(pts) > 1.0):
        raise InputError("Legendre sample outside [-1, 1]^d")
    if strategy.kind == ASYMPTOTIC:
        if basis.family == "hermite":
            r = hermite_ball_radius(basis.p, strategy.radius_multiplier)
            if np.any(np.linalg.norm(pts, axis=1) > r * (1 + 1e-12)):
                raise InputError(f"point outside the sampling ball of radius {r}")
        elif np.any(np.abs(pts) >= 1.0):
            raise InputError("Chebyshev-sampled coordinates must lie strictly inside (-1, 1)")
    return _raw_weights(basis, strategy, pts)


def weight_for(basis: PcBasis, strategy, xi) -> float:
    return float(weights_for(basis, strategy, np.asarray(xi, dtype=float).reshape(1, -1))[0])


def weight_normalization(basis: PcBasis, strategy) -> float:
    """Constant s with (s w)^2 f_Y = f, i.e. the factor 1/c dropped from w."""
    strategy = SamplingStrategy.of(strategy)
    if strategy.kind == STANDARD:
        return 1.0
    if strategy.kind == COHERENCE_OPTIMAL:
        return math.sqrt(basis.P)
    if basis.family == "legendre":
        return (math.pi / 2.0) ** (basis.d / 2.0)
    r = hermite_ball_radius(basis.p, strategy.radius_multiplier)
    log_s2 = _ball_log_volume(r, basis.d) - 0.5 * basis.d * math.log(2.0 * math.pi)
    return math.exp(0.5 * log_s2)


def sample_standard(basis: PcBasis, N: int, seed: int = 0, *, stream=()) -> SampleBatch:
    if N < 1:
        raise InputError(f"N must be >= 1, got {N}")
    rng = make_rng(seed, stream)
    pts = _draw_base(basis, STANDARD, N, rng)
    return SampleBatch(pts, np.ones(N), SamplingStrategy(STANDARD), int(seed), tuple(stream))


def sample_asymptotic(basis: PcBasis, N: int, seed: int = 0, *, stream=(),
                      strategy: Optional[SamplingStrategy] = None) -> SampleBatch:
    if N < 1:
        raise InputError(f"N must be >= 1, got {N}")
    strategy = strategy or SamplingStrategy(ASYMPTOTIC)
    rng = make_rng(seed, stream)
    pts = _draw_base(basis, ASYMPTOTIC, N, rng, strategy.radius_multiplier)
    return SampleBatch(pts, _raw_weights(basis, strategy, pts), strategy, int(seed), tuple(stream))


def _log_importance(basis: PcBasis, proposal: str, pts: np.ndarray) -> np.ndarray:
    # log of target f B^2 over proposal density q, up to a constant
    log_b2 = np.log(basis.envelope_sq(pts))
    if proposal == STANDARD:
        return log_b2
    if basis.family == "hermite":
        return log_b2 - 0.5 * np.sum(pts * pts, axis=1)
    return log_b2 + 0.5 * np.sum(np.log1p(-pts * pts), axis=1)


def _lag1(x: np.ndarray) -> Optional[float]:
    if x.shape[0] < 3:
        return None
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0.0:
        return 0.0
    return float(xc[:-1] @ xc[1:] / denom)


def sample_coherence_optimal(basis: PcBasis, N: int, config: Optional[McmcConfig] = None,
                             seed: int = 0, *, stream=(),
                             strategy: Optional[SamplingStrategy] = None) -> SampleBatch:
    """Draw from the density proportional to f B^2 by independence Metropolis-Hastings.

    Proposals come from a fixed distribution (standard or asymptotic), so the
    acceptance ratio is the ratio of importance weights f B^2 / q.  The
    chain keeps every ``thinning``-th state after ``burn_in`` discarded steps.
    """
    if N < 1:
        raise InputError(f"N must be >= 1, got {N}")
    if strategy is None:
        strategy = SamplingStrategy(COHERENCE_OPTIMAL, config or McmcConfig())
    config = strategy.mcmc
    proposal = config.resolved_proposal(basis)
    if proposal == ASYMPTOTIC and basis.family == "hermite" and basis.p < 1:
        proposal = STANDARD
    rng = make_rng(seed, stream)

    if config.restart:
        pts, rate = _restart_chains(basis, proposal, N, config, rng, strategy.radius_multiplier)
    else:
        pts, rate = _single_chain(basis, proposal, N, config, rng, strategy.radius_multiplier)
    if rate < MIN_ACCEPTANCE:
        warnings.warn(
            f"MCMC acceptance rate {rate:.4f} is below {MIN_ACCEPTANCE}; "
            f"the {proposal} proposal matches the target poorly",
            RuntimeWarning, stacklevel=2,
        )
    env = basis.envelope(pts)
    return SampleBatch(
        pts, 1.0 / env, strategy, int(seed), tuple(stream),
        acceptance_rate=rate, lag1_autocorr=_lag1(env), extra={"proposal": proposal},
    )


def _single_chain(basis, proposal, N, config, rng, radius_multiplier):
    n_steps = config.burn_in + N * config.thinning
    cand = _draw_base(basis, proposal, n_steps + 1, rng, radius_multiplier)
    log_iw = _log_importance(basis, proposal, cand)
    log_u = np.log(rng.random(n_steps))

    kept = np.empty(N, dtype=np.int64)
    cur = 0
    accepted = 0
    n_kept = 0
    for step in range(1, n_steps + 1):
        if log_u[step - 1] < log_iw[step] - log_iw[cur]:
            cur = step
            if step > config.burn_in:
                accepted += 1
        if step > config.burn_in and (step - config.burn_in) % config.thinning == 0:
            kept[n_kept] = cur
            n_kept += 1
    post = n_steps - config.burn_in
    return cand[kept], accepted / post


def _restart_chains(basis, proposal, N, config, rng, radius_multiplier):
    length = config.restart_steps
    state = _draw_base(basis, proposal, N, rng, radius_multiplier)
    state_iw = _log_importance(basis, proposal, state)
    accepted = 0
    for _ in range(length):
        cand = _draw_base(basis, proposal, N, rng, radius_multiplier)
        cand_iw = _log_importance(basis, proposal, cand)
        take = np.log(rng.random(N)) < cand_iw - state_iw
        state[take] = cand[take]
        state_iw[take] = cand_iw[take]
        accepted += int(take.sum())
    return state, accepted / (N * length)


def draw(basis: PcBasis, strategy, N: int, seed: int = 0, *, stream=()) -> SampleBatch:
    """Dispatch to the sampler for ``strategy``."""
    strategy = SamplingStrategy.of(strategy)
    if strategy.kind == STANDARD:
        return sample_standard(basis, N, seed, stream=stream)
    if strategy.kind == ASYMPTOTIC:
        return sample_asymptotic(basis, N, seed, stream=stream, strategy=strategy)
    return sample_coherence_optimal(basis, N, seed=seed, stream=stream, strategy=strategy)
