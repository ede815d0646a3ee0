"""
Total-order orthonormal polynomial chaos bases.

Hermite polynomials are the probabilists' family normalized against the
standard Gaussian density; Legendre polynomials are normalized against the
uniform density 1/2 on [-1, 1].  Both are evaluated with three-term
recurrences written directly on the orthonormal polynomials, which keeps
high orders (p = 32 and beyond) free of factorial overflow.

Multi-indices are ordered by total degree, ties broken by ascending
lexicographic order, so basis column k is reproducible across runs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import InputError, NumericalError, SizeError

FAMILIES = ("hermite", "legendre")

INT64_MAX = np.iinfo(np.int64).max
# enumeration cap; counting via total_order_size has no such cap
MAX_ENUMERATED_INDICES = 20_000_000
# rows evaluated per block when forming N x P matrices
ROW_BLOCK = 8192


def check_family(family: str) -> str:
    fam = str(family).lower()
    if fam not in FAMILIES:
        raise InputError(f"unknown polynomial family {family!r}; expected one of {FAMILIES}")
    return fam


def total_order_size(d: int, p: int) -> int:
    """Cardinality binomial(p + d, d) of the total-order set, range-checked."""
    if d < 1:
        raise InputError(f"dimension d must be >= 1, got d={d}")
    if p < 0:
        raise InputError(f"order p must be >= 0, got p={p}")
    size = math.comb(p + d, d)
    if size > INT64_MAX:
        raise SizeError(
            f"total-order set for (d={d}, p={p}) has {size} elements, "
            f"beyond the 64-bit integer range"
        )
    return size


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    # weak compositions of `total` into `parts`, ascending lexicographic order
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class MultiIndexSet:
    """Exhaustive total-order multi-index set, graded-lex ordered.

    ``indices`` is a read-only (P, d) integer array; row 0 is all zeros.
    """

    d: int
    p: int
    indices: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.indices.shape[0]

    @property
    def size(self) -> int:
        return self.indices.shape[0]

    def as_tuples(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in row) for row in self.indices]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"k{i + 1}" for i in range(self.d)])
            writer.writerows(self.indices.tolist())


def total_order_indices(d: int, p: int) -> MultiIndexSet:
    """Enumerate all multi-indices k in N^d with |k|_1 <= p.

    Ordering is graded (total degree ascending) with ascending lexicographic
    tie-break.  Raises :class:`SizeError` when the set cannot be represented
    or would exceed the enumeration budget.
    """
    size = total_order_size(d, p)
    if size > MAX_ENUMERATED_INDICES:
        raise SizeError(
            f"total-order set for (d={d}, p={p}) has {size} elements, "
            f"above the enumeration budget of {MAX_ENUMERATED_INDICES}"
        )
    out = np.empty((size, d), dtype=np.int64)
    row = 0
    for degree in range(p + 1):
        for comp in _compositions(degree, d):
            out[row] = comp
            row += 1
    assert row == size
    out.setflags(write=False)
    return MultiIndexSet(d=d, p=p, indices=out)


def _recurrence_coefficients(family: str, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Jacobi-matrix coefficients (diagonal, off-diagonal) of the orthonormal family.

    The orthonormal polynomials satisfy
    x psi_k = b_{k+1} psi_{k+1} + a_k psi_k + b_k psi_{k-1}
    with a_k = 0 for both symmetric families.
    """
    k = np.arange(1, n, dtype=float)
    if family == "hermite":
        off = np.sqrt(k)
    else:
        off = k / np.sqrt(4.0 * k * k - 1.0)
    return np.zeros(n), off


def eval_univariate(family: str, k_max: int, x) -> np.ndarray:
    """Orthonormal polynomials psi_0..psi_{k_max} at x.

    ``x`` may be a scalar or an array; the result has shape
    ``np.shape(x) + (k_max + 1,)``.
    """
    fam = check_family(family)
    if k_max < 0:
        raise InputError(f"k_max must be >= 0, got {k_max}")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InputError("polynomial argument must be finite")
    out = np.empty(x.shape + (k_max + 1,))
    out[..., 0] = 1.0
    if k_max == 0:
        return out
    _, off = _recurrence_coefficients(fam, k_max + 1)
    # psi_{k+1} = (x psi_k - b_k psi_{k-1}) / b_{k+1}; off[j] holds b_{j+1}
    out[..., 1] = x / off[0]
    for k in range(1, k_max):
        out[..., k + 1] = (x * out[..., k] - off[k - 1] * out[..., k - 1]) / off[k]
    return out


@dataclass(frozen=True)
class PcBasis:
    """Tensorized orthonormal basis over a total-order multi-index set."""

    family: str
    index_set: MultiIndexSet

    def __post_init__(self):
        object.__setattr__(self, "family", check_family(self.family))

    @classmethod
    def total_order(cls, family: str, d: int, p: int) -> "PcBasis":
        return cls(family, total_order_indices(d, p))

    @property
    def d(self) -> int:
        return self.index_set.d

    @property
    def p(self) -> int:
        return self.index_set.p

    @property
    def P(self) -> int:
        return self.index_set.size

    @property
    def indices(self) -> np.ndarray:
        return self.index_set.indices

    def density(self, points) -> np.ndarray:
        """Orthogonality density f at each row of ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.family == "hermite":
            return np.exp(-0.5 * np.sum(pts * pts, axis=1)) / (2.0 * np.pi) ** (self.d / 2)
        inside = np.all(np.abs(pts) <= 1.0, axis=1)
        return np.where(inside, 0.5**self.d, 0.0)

    def _check_points(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if pts.ndim != 2 or pts.shape[1] != self.d:
            raise InputError(
                f"points must have {self.d} coordinates, got shape {np.shape(points)}"
            )
        if not np.all(np.isfinite(pts)):
            raise InputError("points must be finite")
        if self.family == "legendre" and np.any(np.abs(pts) > 1.0):
            bad = float(np.max(np.abs(pts)))
            raise InputError(f"Legendre coordinates must lie in [-1, 1]; found |x| = {bad}")
        return pts

    def _evaluate_block(self, pts: np.ndarray) -> np.ndarray:
        tables = eval_univariate(self.family, self.p, pts)  # (n, d, p+1)
        idx = self.indices
        out = tables[:, 0, idx[:, 0]]
        for i in range(1, self.d):
            out = out * tables[:, i, idx[:, i]]
        return out

    def evaluate(self, points) -> np.ndarray:
        """Measurement matrix: entry (i, k) is psi_k at point i, shape (N, P)."""
        pts = self._check_points(points)
        if pts.shape[0] <= ROW_BLOCK:
            return self._evaluate_block(pts)
        out = np.empty((pts.shape[0], self.P))
        for start in range(0, pts.shape[0], ROW_BLOCK):
            stop = start + ROW_BLOCK
            out[start:stop] = self._evaluate_block(pts[start:stop])
        return out

    def envelope_sq(self, points) -> np.ndarray:
        """B(xi)^2, the sum of squared basis functions, for each point."""
        pts = self._check_points(points)
        out = np.empty(pts.shape[0])
        for start in range(0, pts.shape[0], ROW_BLOCK):
            block = self._evaluate_block(pts[start:start + ROW_BLOCK])
            out[start:start + ROW_BLOCK] = np.einsum("ij,ij->i", block, block)
        return out

    def envelope(self, points) -> np.ndarray:
        return np.sqrt(self.envelope_sq(points))


def eval_basis_row(basis: PcBasis, xi) -> np.ndarray:
    """Values of all P basis functions at a single point."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 1:
        raise InputError(f"expected a single point, got shape {xi.shape}")
    return basis.evaluate(xi)[0]


def envelope_B(basis: PcBasis, xi) -> float:
    """sqrt(sum_k psi_k(xi)^2) at a single point; always >= 1."""
    row = eval_basis_row(basis, xi)
    return float(np.sqrt(row @ row))


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss rule normalized against the probability density (weights sum to 1)."""

    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return self.nodes.shape[0]


def gauss_rule(family: str, n: int) -> QuadratureRule:
    """n-point Gauss rule by the Golub-Welsch eigenvalue construction.

    Nodes are the eigenvalues of the symmetric tridiagonal Jacobi matrix of
    the orthonormal recurrence; weights are the squared first components of
    the normalized eigenvectors.
    """
    fam = check_family(family)
    if n < 1:
        raise InputError(f"quadrature size must be >= 1, got n={n}")
    if n == 1:
        return QuadratureRule(np.zeros(1), np.ones(1))
    diag, off = _recurrence_coefficients(fam, n)
    try:
        nodes, vecs = eigh_tridiagonal(diag, off, lapack_driver="stev")
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"tridiagonal eigensolver failed for n={n}: {exc}") from exc
    weights = vecs[0, :] ** 2
    # symmetric families: enforce exact symmetry of the rule
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    weights = weights / weights.sum()
    return QuadratureRule(nodes, weights)


def tensor_rule(family: str, n_per_dim: int, d: int, budget: int = 2_000_000):
    """Tensor-product Gauss rule: (n^d, d) nodes and (n^d,) weights."""
    total = n_per_dim**d
    if total > budget:
        raise SizeError(
            f"tensor rule with n_per_dim={n_per_dim}, d={d} needs {total} nodes, "
            f"above the budget of {budget}"
        )
    rule = gauss_rule(family, n_per_dim)
    grids = np.meshgrid(*([rule.nodes] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([rule.weights] * d), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return nodes, weights


def gram_matrix(basis: PcBasis, n_per_dim: int, budget: int = 2_000_000) -> np.ndarray:
    """Quadrature Gram matrix sum_q w_q psi_i(x_q) psi_j(x_q); identity when exact."""
    if n_per_dim < 1:
        raise InputError(f"n_per_dim must be >= 1, got {n_per_dim}")
    nodes, weights = tensor_rule(basis.family, n_per_dim, basis.d, budget)
    psi = basis.evaluate(nodes)
    return (psi * weights[:, None]).T @ psi


def multi_index_labels(d: int) -> Sequence[str]:
    return [f"k{i + 1}" for i in range(d)]
