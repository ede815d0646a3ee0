"""Weighted least-squares recovery of PC coefficients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import lsqr

from .basis import PcBasis
from .coherence import spectral_stability
from .errors import InputError, NumericalError
from .sampling import SampleBatch, make_rng, sample_standard, weight_normalization

QR = "qr"
MIN_NORM_SVD = "min-norm-svd"
ITERATIVE_LSQR = "lsqr"


@dataclass(frozen=True)
class DesignSystem:
    """Rows w_i psi_k(xi_i) and right-hand side w_i u(xi_i).

    ``weight_scale`` is the constant that probability-normalizes the
    weights; it only enters the stability matrix.
    """

    weighted_matrix: np.ndarray
    weighted_rhs: np.ndarray
    weight_scale: float = 1.0

    @property
    def N(self) -> int:
        return self.weighted_matrix.shape[0]

    @property
    def P(self) -> int:
        return self.weighted_matrix.shape[1]


@dataclass(frozen=True)
class FitResult:
    coefficients: np.ndarray
    residual_norm: float
    rank: int
    rank_deficient: bool
    sigma_stability: Optional[float]
    method: str

    @property
    def stable(self) -> Optional[bool]:
        return None if self.sigma_stability is None else self.sigma_stability <= 0.5


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "none"
    sigma_rel: float = 0.03

    def __post_init__(self):
        if self.kind not in ("none", "relative-gaussian"):
            raise InputError(f"unknown noise model {self.kind!r}")
        if self.sigma_rel < 0:
            raise InputError(f"sigma_rel must be >= 0, got {self.sigma_rel}")

    @classmethod
    def relative(cls, sigma_rel: float = 0.03) -> "NoiseModel":
        return cls("relative-gaussian", sigma_rel)

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.sigma_rel > 0


def assemble(basis: PcBasis, batch: SampleBatch, values, *, normalize_scale: bool = True) -> DesignSystem:
    values = np.asarray(values, dtype=float)
    if values.shape != (batch.N,):
        raise InputError(f"expected {batch.N} QoI values, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise InputError("QoI values must be finite")
    w = np.asarray(batch.weights, dtype=float)
    A = basis.evaluate(batch.points) * w[:, None]
    scale = weight_normalization(basis, batch.strategy) if normalize_scale else 1.0
    return DesignSystem(A, w * values, scale)


def assemble_weighted(basis: PcBasis, points, weights, values, weight_scale: float = 1.0) -> DesignSystem:
    """Assemble from raw arrays (e.g. a sample CSV)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    weights = np.asarray(weights, dtype=float)
    values = np.asarray(values, dtype=float)
    n = points.shape[0]
    if weights.shape != (n,) or values.shape != (n,):
        raise InputError(f"points, weights and values must share length {n}")
    if not (np.all(np.isfinite(weights)) and np.all(weights > 0)):
        raise InputError("weights must be finite and positive")
    if not np.all(np.isfinite(values)):
        raise InputError("QoI values must be finite")
    # overflow surfaces as a non-finite design, reported by solve
    with np.errstate(over="ignore"):
        return DesignSystem(basis.evaluate(points) * weights[:, None], weights * values, weight_scale)


def _rank_tol(A: np.ndarray, largest: float) -> float:
    return max(A.shape) * np.finfo(float).eps * largest


def solve(design: DesignSystem, method: str = "auto", *, stability: bool = True,
          lsqr_iterations: int = 100_000) -> FitResult:
    """Solve argmin ||W u - W Psi c||_2.

    Full column rank (pivoted-QR estimate) uses the QR solution; otherwise
    the minimum-norm SVD solution is returned with ``rank_deficient`` set.
    ``method="lsqr"`` runs the iterative solver instead.
    """
    A = design.weighted_matrix
    b = design.weighted_rhs
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise NumericalError("design system has non-finite entries")
    N, P = A.shape
    if N < 1 or P < 1:
        raise InputError(f"design must be non-empty, got {N}x{P}")

    if method == ITERATIVE_LSQR:
        out = lsqr(A, b, atol=1e-14, btol=1e-14, conlim=1e16, iter_lim=lsqr_iterations)
        coef = out[0]
        s = linalg.svdvals(A)
        rank = int(np.sum(s > _rank_tol(A, s[0])))
        used = ITERATIVE_LSQR
    else:
        if method not in ("auto", QR, MIN_NORM_SVD):
            raise InputError(f"unknown solve method {method!r}")
        coef, rank = None, 0
        if method != MIN_NORM_SVD and N >= P:
            Q, R, piv = linalg.qr(A, mode="economic", pivoting=True)
            diag = np.abs(np.diag(R))
            rank = int(np.sum(diag > _rank_tol(A, diag[0]))) if diag[0] > 0 else 0
            if rank == P:
                coef = np.empty(P)
                coef[piv] = linalg.solve_triangular(R, Q.T @ b)
                used = QR
        if coef is None:
            tol = max(N, P) * np.finfo(float).eps
            coef, _, rank, _ = linalg.lstsq(A, b, cond=tol, lapack_driver="gelsd")
            used = MIN_NORM_SVD
    rank = int(rank)
    residual = float(np.linalg.norm(b - A @ coef))
    sigma = spectral_stability(design)[0] if stability else None
    return FitResult(coef, residual, rank, rank < P, sigma, used)


def apply_noise(values, model: NoiseModel, seed: int = 0, *, stream=(), rng=None) -> np.ndarray:
    """Add N(0, (sigma_rel |v|)^2) to each value independently."""
    values = np.asarray(values, dtype=float)
    if not model.active:
        return values.copy()
    rng = make_rng(seed, stream) if rng is None else rng
    return values + model.sigma_rel * np.abs(values) * rng.standard_normal(values.shape)


def relative_error(c_hat, c_true) -> float:
    c_hat = np.asarray(c_hat, dtype=float)
    c_true = np.asarray(c_true, dtype=float)
    if c_hat.shape != c_true.shape:
        raise InputError(f"coefficient vectors differ in shape: {c_hat.shape} vs {c_true.shape}")
    ref = np.linalg.norm(c_true)
    if ref == 0:
        raise InputError("reference coefficients have zero norm")
    return float(np.linalg.norm(c_hat - c_true) / ref)


def recovery_success(c_hat, c_true, threshold: float = 0.02) -> bool:
    return relative_error(c_hat, c_true) <= threshold


class ValidationRmse(NamedTuple):
    sampled: float
    coefficient: float


def validation_rmse(basis: PcBasis, c_hat, c_ref, n_val: int, seed: int = 0, *,
                    stream=()) -> ValidationRmse:
    """Relative RMSE between two expansions on standard-measure samples.

    Also returns the coefficient-space value, which the sampled one
    estimates by orthonormality.
    """
    if n_val < 1:
        raise InputError(f"n_val must be >= 1, got {n_val}")
    coefficient = relative_error(c_hat, c_ref)

    pts = sample_standard(basis, n_val, seed, stream=stream).points
    psi = basis.evaluate(pts)
    u_hat = psi @ np.asarray(c_hat, dtype=float)
    u_ref = psi @ np.asarray(c_ref, dtype=float)
    denom = np.linalg.norm(u_ref)
    if denom == 0:
        raise InputError("reference expansion vanishes on the validation sample")
    return ValidationRmse(float(np.linalg.norm(u_hat - u_ref) / denom), coefficient)
