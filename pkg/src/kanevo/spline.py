"""Cubic B-spline grids and the per-edge activation function."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

DEGREE = kernels.DEGREE


class SplineDomainError(ValueError):
    """Raised for non-finite evaluation points or malformed grids."""


@dataclass(frozen=True)
class SplineGrid:
    """Uniform cubic knot layout over ``[domain_lo, domain_hi]``.

    ``knots`` extends ``DEGREE`` knots past each end at the same spacing, so
    there are ``intervals + DEGREE`` basis functions.
    """

    domain_lo: float
    domain_hi: float
    intervals: int
    degree: int = DEGREE
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.domain_lo) and math.isfinite(self.domain_hi)):
            raise SplineDomainError("spline domain must be finite")
        if not self.domain_lo < self.domain_hi:
            raise SplineDomainError(f"empty spline domain [{self.domain_lo}, {self.domain_hi}]")
        if int(self.intervals) != self.intervals or self.intervals < 1:
            raise SplineDomainError(f"intervals must be a positive integer, got {self.intervals}")
        if self.degree != DEGREE:
            raise SplineDomainError(f"only degree {DEGREE} is supported")
        h = (self.domain_hi - self.domain_lo) / self.intervals
        steps = np.arange(-self.degree, self.intervals + self.degree + 1, dtype=float)
        knots = self.domain_lo + steps * h
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def n_basis(self) -> int:
        return self.intervals + self.degree

    @property
    def spacing(self) -> float:
        return (self.domain_hi - self.domain_lo) / self.intervals


def _check_point(x) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise SplineDomainError(f"cannot evaluate spline at non-finite x={x}")
    return x


def _single(grid: SplineGrid, x: float):
    X = np.array([[x]])
    lo = np.array([grid.domain_lo])
    hi = np.array([grid.domain_hi])
    B, dB = kernels.layer_basis(X, lo, hi, grid.intervals)
    return B[0, 0], dB[0, 0]


def basis_eval(grid: SplineGrid, x: float) -> np.ndarray:
    """Values of all ``G + 3`` basis functions at ``x`` (clamped to the domain)."""
    return _single(grid, _check_point(x))[0]


def basis_deriv(grid: SplineGrid, x: float) -> np.ndarray:
    """d/dx of every basis function; zero when ``x`` lies outside the domain."""
    return _single(grid, _check_point(x))[1]


def basis_matrix(grid: SplineGrid, xs) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``(basis, derivative)`` for a 1-D array of points."""
    xs = np.asarray(xs, dtype=float).reshape(-1, 1)
    if not np.all(np.isfinite(xs)):
        raise SplineDomainError("cannot evaluate spline at non-finite points")
    B, dB = kernels.layer_basis(xs, np.array([grid.domain_lo]), np.array([grid.domain_hi]), grid.intervals)
    return B[:, 0, :], dB[:, 0, :]


def silu(x):
    return kernels.silu(x)


def edge_activation(grid: SplineGrid, coeffs, w_b: float, w_s: float, x: float) -> float:
    """``w_b * silu(x) + w_s * sum_i c_i B_i(x)``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (grid.n_basis,):
        raise ValueError(f"expected {grid.n_basis} coefficients, got shape {coeffs.shape}")
    x = _check_point(x)
    return float(w_b * silu(x) + w_s * float(basis_eval(grid, x) @ coeffs))
