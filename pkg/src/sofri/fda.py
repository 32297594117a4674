"""Functional-data containers, B-spline bases, and quadrature projection.

Curves observed on a common dense grid are reduced to score vectors by
integrating them against a cubic B-spline basis with trapezoidal quadrature.
The basis carries the second-order difference penalty matrix used by the
smoothing prior on the functional coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import (
    DimensionMismatch,
    GridMismatch,
    InvalidK,
    NonMonotoneGrid,
    TooFewPoints,
)


@dataclass(frozen=True)
class Grid:
    """Ordered observation points shared by a set of curves."""

    points: np.ndarray

    @property
    def T(self) -> int:
        return len(self.points)

    @property
    def length(self) -> float:
        """Length of the index interval."""
        return float(self.points[-1] - self.points[0])

    def matches(self, other: "Grid") -> bool:
        return self.T == other.T and bool(
            np.allclose(self.points, other.points, rtol=0, atol=1e-12)
        )


def build_grid(points) -> Grid:
    """Validate and wrap a vector of observation points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 1 or len(pts) < 2:
        raise TooFewPoints(f"grid needs at least 2 points, got {pts.size}")
    if not np.all(np.isfinite(pts)):
        raise NonMonotoneGrid("grid contains non-finite points")
    if not np.all(np.diff(pts) > 0):
        raise NonMonotoneGrid("grid points must be strictly increasing")
    pts.setflags(write=False)
    return Grid(points=pts)


@dataclass(frozen=True)
class FunctionalDataset:
    """n curves evaluated on a common grid (rows = curves)."""

    grid: Grid
    values: np.ndarray
    curve_ids: tuple = field(default=())

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] < 1:
            raise DimensionMismatch("values must be an n x T matrix with n >= 1")
        if vals.shape[1] != self.grid.T:
            raise GridMismatch(
                f"curves have {vals.shape[1]} columns but grid has {self.grid.T} points"
            )
        if not np.all(np.isfinite(vals)):
            raise DimensionMismatch("curve values must all be finite")
        ids = self.curve_ids or tuple(str(i) for i in range(vals.shape[0]))
        if len(ids) != vals.shape[0]:
            raise DimensionMismatch("curve_ids length must equal number of curves")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "curve_ids", tuple(ids))

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class BasisSystem:
    """B-spline basis evaluated on a grid, with quadrature and penalty."""

    grid: Grid
    basis_values: np.ndarray   # T x K
    quad_weights: np.ndarray   # T
    penalty: np.ndarray        # K x K, rank K-2
    degree: int
    K: int


@dataclass(frozen=True)
class ScoreMatrix:
    """Quadrature projections of curves onto the basis (n x K)."""

    scores: np.ndarray
    source: str = ""


def second_difference_penalty(K: int) -> np.ndarray:
    """P = D'D with D the (K-2) x K second-difference operator."""
    D = np.zeros((K - 2, K))
    for r in range(K - 2):
        D[r, r : r + 3] = [1.0, -2.0, 1.0]
    return D.T @ D


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Trapezoid-rule quadrature weights; they sum to the interval length."""
    w = np.zeros(len(points))
    d = np.diff(points)
    w[:-1] += d / 2.0
    w[1:] += d / 2.0
    return w


def build_bspline_basis(grid: Grid, K: int = 15, degree: int = 3) -> BasisSystem:
    """Cubic (by default) B-spline basis with equally spaced interior knots.

    Boundary knots are clamped at the grid range. The basis is not
    orthogonalized; smoothness comes from the difference penalty instead.
    """
    if K < degree + 1:
        raise InvalidK(f"K={K} requires at least degree+1={degree + 1} basis functions")
    a, b = float(grid.points[0]), float(grid.points[-1])
    n_interior = K - degree - 1
    interior = np.linspace(a, b, n_interior + 2)[1:-1]
    knots = np.concatenate([np.full(degree + 1, a), interior, np.full(degree + 1, b)])
    spl = BSpline(knots, np.eye(K), degree, extrapolate=True)
    B = spl(grid.points)
    B[np.abs(B) < 1e-15] = 0.0
    return BasisSystem(
        grid=grid,
        basis_values=B,
        quad_weights=trapezoid_weights(grid.points),
        penalty=second_difference_penalty(K),
        degree=degree,
        K=K,
    )


def project(data: FunctionalDataset, basis: BasisSystem, source: str = "") -> ScoreMatrix:
    """Score curves against the basis: scores[i,k] = sum_t w_t B[t,k] x_i(t)."""
    if not data.grid.matches(basis.grid):
        raise GridMismatch("dataset grid differs from the grid the basis was built on")
    weighted = basis.quad_weights[:, None] * basis.basis_values
    return ScoreMatrix(scores=data.values @ weighted, source=source)


def reconstruct_function(coeffs, basis: BasisSystem) -> np.ndarray:
    """Evaluate the coefficient expansion on the grid: B @ coeffs."""
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (basis.K,):
        raise DimensionMismatch(f"expected {basis.K} coefficients, got shape {c.shape}")
    return basis.basis_values @ c


def gram_matrix(basis: BasisSystem) -> np.ndarray:
    """Quadrature Gram matrix G[j,k] = sum_t w_t B[t,j] B[t,k]."""
    return basis.basis_values.T @ (basis.quad_weights[:, None] * basis.basis_values)
