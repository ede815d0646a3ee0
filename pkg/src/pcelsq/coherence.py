"""
Coherence estimation, recovery bounds, and sample-size planning.

Empirical coherences are maxima over a probe sample, so they are lower
estimates of the true suprema.  All probe weights are probability-normalized
(see :func:`pcelsq.sampling.weight_normalization`), which is the scaling under
which coherence-optimal sampling gives mu2 = P exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .basis import ROW_BLOCK, PcBasis, check_family
from .errors import InfeasibleError, InputError, NumericalError
from .sampling import (
    ASYMPTOTIC, COHERENCE_OPTIMAL, STANDARD, SamplingStrategy, check_strategy_kind, draw,
    weight_normalization,
)

# Chernoff exponent constant used by the recovery theorems
CHERNOFF_RATE = 0.1
STABILITY_RADIUS = 0.5


def default_n_probe(d: int) -> int:
    if d <= 5:
        return 1_000_000
    n = 100_000
    warnings.warn(f"d={d} > 5: probe sample reduced to n_probe={n}", RuntimeWarning, stacklevel=2)
    return n


@dataclass(frozen=True)
class CoherenceReport:
    family: str
    strategy: str
    d: int
    p: int
    P: int
    n_probe: int
    mu2_hat: float
    mu_inf_hat: float
    mu2_theory: Optional[float]
    mu_inf_bound: Optional[float]
    seed: int
    # "exact", "asymptotic" (C_p -> 1) or "order" (O(.) constant taken as 1)
    bound_kind: Optional[str] = None

    CSV_FIELDS = ("family", "strategy", "d", "p", "P", "n_probe", "mu2_hat", "mu_inf_hat",
                  "mu2_theory", "mu_inf_bound", "seed")

    def as_row(self) -> dict:
        row = asdict(self)
        return {k: row[k] for k in self.CSV_FIELDS}


def _probe_coherence(basis: PcBasis, points: np.ndarray, weights: np.ndarray):
    mu2 = 0.0
    mu_inf = 0.0
    for start in range(0, points.shape[0], ROW_BLOCK):
        block = basis.evaluate(points[start:start + ROW_BLOCK])
        block *= weights[start:start + ROW_BLOCK, None]
        block *= block
        mu2 = max(mu2, float(block.sum(axis=1).max()))
        mu_inf = max(mu_inf, float(block.max()))
    return mu2, mu_inf


def estimate_coherence(basis: PcBasis, strategy, n_probe: int, seed: int = 0, *,
                       stream=()) -> CoherenceReport:
    """Probe-sample estimates of mu2 and mu_inf for ``strategy``."""
    if n_probe < 1:
        raise InputError(f"n_probe must be >= 1, got {n_probe}")
    strategy = SamplingStrategy.of(strategy)
    batch = draw(basis, strategy, n_probe, seed, stream=stream)
    scale = weight_normalization(basis, strategy)
    mu2, mu_inf = _probe_coherence(basis, batch.points, scale * batch.weights)

    kind = strategy.kind
    mu2_theory = float(basis.P) if kind == COHERENCE_OPTIMAL else None
    bound, bound_kind = None, None
    if basis.p >= 1 and not (kind == ASYMPTOTIC and strategy.radius_multiplier != 1.0):
        bound = mu_inf_theory_bound(basis.family, kind, basis.d, basis.p)
        bound_kind = mu_inf_bound_kind(basis.family, kind)
    return CoherenceReport(
        basis.family, kind, basis.d, basis.p, basis.P, int(n_probe), mu2, mu_inf,
        mu2_theory, bound, int(seed), bound_kind,
    )


def mu_inf_theory_bound(family: str, strategy_kind: str, d: int, p: int) -> float:
    """Analytic bound (or asymptotic envelope) on mu_inf for a sampling strategy.

    Standard Legendre returns the smallest applicable of exp(2p), 3^p (p < d)
    and (2p/d + 1)^d (p >= d).  Standard Hermite returns exp((2 - ln 2) p),
    valid only as p grows.  Asymptotic Hermite returns (2p)^(d/2) / Gamma(d/2+1)
    with the unknown order constant set to 1.  Coherence-optimal returns P,
    since (w psi_k)^2 <= sum_k (w psi_k)^2 = P pointwise.
    """
    family = check_family(family)
    kind = check_strategy_kind(strategy_kind)
    if d < 1 or p < 1:
        raise InputError(f"bound needs d >= 1 and p >= 1, got d={d}, p={p}")
    if kind == COHERENCE_OPTIMAL:
        return float(math.comb(p + d, d))
    if kind == STANDARD:
        if family == "legendre":
            candidates = [math.exp(2 * p)]
            if p < d:
                candidates.append(3.0**p)
            else:
                candidates.append((2 * p / d + 1) ** d)
            return float(min(candidates))
        return math.exp((2 - math.log(2)) * p)
    if family == "legendre":
        return 3.0**d
    return math.exp(0.5 * d * math.log(2 * p) - math.lgamma(d / 2 + 1))


def mu_inf_bound_kind(family: str, strategy_kind: str) -> str:
    family = check_family(family)
    kind = check_strategy_kind(strategy_kind)
    if family == "hermite" and kind == STANDARD:
        return "asymptotic"
    if family == "hermite" and kind == ASYMPTOTIC:
        return "order"
    return "exact"


@dataclass(frozen=True)
class SampleSizePlan:
    """Inputs of the explicit sample-size corollaries.

    ``noise_model=None`` selects the noisy form (coefficient 8) exactly when
    ``epsM2 > 0``; pass ``True`` to force it with ``epsM2 = 0``.
    """

    P: int
    nu: float = 1.0
    tau: float = math.inf
    rho: float = 0.99
    eps2: float = 0.0
    epsM2: float = 0.0
    bounded_coherence: bool = True
    noise_model: Optional[bool] = None

    def uses_noise_model(self) -> bool:
        return self.epsM2 > 0 if self.noise_model is None else bool(self.noise_model)


def required_samples(plan: SampleSizePlan) -> int:
    """N = ceil(nu * max(a (E eps^2 [+ E eps_M^2]) P / tau, 10 P log(2P / (1 - [1/P] - rho))))."""
    P = plan.P
    if P < 1:
        raise InputError(f"P must be >= 1, got {P}")
    if not plan.nu > 0:
        raise InputError(f"nu must be positive, got {plan.nu}")
    if not plan.tau > 0:
        raise InputError(f"tau must be positive, got {plan.tau}")
    if not 0 < plan.rho < 1:
        raise InputError(f"rho must lie in (0, 1), got {plan.rho}")
    if plan.eps2 < 0 or plan.epsM2 < 0:
        raise InputError("error energies eps2 and epsM2 must be non-negative")
    slack = 1.0 - plan.rho
    if not plan.bounded_coherence:
        slack -= 1.0 / P
        if slack <= 0:
            raise InfeasibleError(
                f"truncated-coherence plan needs rho < 1 - 1/P = {1 - 1 / P:.6g}, got rho={plan.rho}"
            )
    if plan.uses_noise_model():
        accuracy = 8.0 * (plan.eps2 + plan.epsM2) / plan.tau * P
    else:
        accuracy = 4.0 * plan.eps2 / plan.tau * P
    confidence = 10.0 * P * math.log(2.0 * P / slack)
    return int(math.ceil(plan.nu * max(accuracy, confidence)))


def mse_bound(eps2: float, epsM2: float, mu2: float, N: int) -> float:
    """Right-hand side of the restricted mean-square error bound."""
    if N < 1:
        raise InputError(f"N must be >= 1, got {N}")
    if epsM2 == 0:
        return eps2 * (1.0 + 4.0 * mu2 / N)
    return eps2 + 8.0 * mu2 * (eps2 + epsM2) / N


def failure_prob_bound(N: int, mu2: float, P: int, bounded_coherence: bool = True) -> float:
    """min(1, 2P exp(-0.1 N / mu2) [+ 1/P])."""
    val = 2.0 * P * math.exp(-CHERNOFF_RATE * N / mu2)
    if not bounded_coherence:
        val += 1.0 / P
    return min(1.0, val)


def markov_tail_bound(N: int, mu2: float, P: int, eps2: float, epsM2: float, tau: float,
                      bounded_coherence: bool = True) -> float:
    """Markov-inequality bound on P(||u - u_hat||^2 >= E eps^2 + tau)."""
    if not tau > 0:
        raise InputError(f"tau must be positive, got {tau}")
    if N <= 0:
        return 1.0
    if epsM2 == 0:
        markov = 4.0 * (mu2 / N) * eps2 / tau
    else:
        markov = 8.0 * (mu2 / N) * (eps2 + epsM2) / tau
    val = 2.0 * P * math.exp(-CHERNOFF_RATE * N / mu2) + markov
    if not bounded_coherence:
        val += 1.0 / P
    return min(1.0, val)


def stability_matrix(design) -> np.ndarray:
    """M = (s W Psi)^T (s W Psi) / N with s the weight normalization."""
    A = np.asarray(design.weighted_matrix)
    if not np.all(np.isfinite(A)):
        raise NumericalError("design matrix has non-finite entries")
    s = getattr(design, "weight_scale", 1.0)
    N = A.shape[0]
    if N < 1:
        raise InputError("design needs at least one row")
    return (s * s / N) * (A.T @ A)


def spectral_stability(design) -> tuple[float, bool]:
    """sigma = ||M - I||_2 and whether sigma <= 1/2."""
    M = stability_matrix(design)
    M[np.diag_indices_from(M)] -= 1.0
    eig = np.linalg.eigvalsh(M)
    sigma = float(max(abs(eig[0]), abs(eig[-1])))
    return sigma, sigma <= STABILITY_RADIUS
