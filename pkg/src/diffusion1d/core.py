"""Shared domain types: intervals, uniform grids, quadrature and finite differences.

Everything here is a pure function of its inputs; values are immutable after
construction and safe to share between concurrent tasks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

__all__ = [
    "DomainError",
    "Interval",
    "FULL_LINE",
    "HALF_LINE",
    "UniformGrid",
    "GridField",
    "DiffusionSpec",
    "quadrature_weights",
    "integrate",
    "derivative",
]


class DomainError(ValueError):
    """Evaluation outside the region where an operation is defined."""


@dataclass(frozen=True)
class Interval:
    """Open interval (r1, r2).  Endpoints may be ``-inf`` / ``+inf``; NaN is rejected."""

    r1: float
    r2: float

    def __post_init__(self) -> None:
        r1, r2 = float(self.r1), float(self.r2)
        if math.isnan(r1) or math.isnan(r2):
            raise ValueError("interval endpoints must be finite or infinite, not NaN")
        if not r1 < r2:
            raise ValueError(f"interval needs r1 < r2, got ({r1}, {r2})")
        object.__setattr__(self, "r1", r1)
        object.__setattr__(self, "r2", r2)

    def contains(self, x):
        """Strict interior test; works on scalars and arrays."""
        return (self.r1 < x) & (x < self.r2)

    @property
    def finite_endpoints(self) -> tuple[float, ...]:
        return tuple(r for r in (self.r1, self.r2) if math.isfinite(r))


FULL_LINE = Interval(-math.inf, math.inf)
HALF_LINE = Interval(0.0, math.inf)


@dataclass(frozen=True)
class UniformGrid:
    """n equally spaced points on [lo, hi], spacing h = (hi-lo)/(n-1)."""

    lo: float
    hi: float
    n: int

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError(f"grid needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.n < 3:
            raise ValueError(f"grid needs n >= 3, got {self.n}")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError("grid endpoints must be finite")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @cached_property
    def points(self) -> np.ndarray:
        x = np.linspace(self.lo, self.hi, self.n)
        x.setflags(write=False)
        return x


@dataclass
class GridField:
    """A scalar function sampled on a uniform grid.  All values must be finite."""

    grid: UniformGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must all be finite")
        self.values = v

    @classmethod
    def sample(cls, grid: UniformGrid, fn: Callable) -> "GridField":
        return cls(grid, np.asarray(fn(grid.points), dtype=float))

    def normalized(self) -> "GridField":
        """Rescale so the field integrates to one."""
        mass = integrate(self)
        if mass <= 0:
            raise ValueError("cannot normalize a field with non-positive mass")
        return GridField(self.grid, self.values / mass)


def quadrature_weights(grid: UniformGrid) -> np.ndarray:
    """Weights w with integral(f) = sum(w * f).

    Composite Simpson for an odd point count, trapezoid fallback for even.
    """
    h, n = grid.h, grid.n
    if n % 2 == 1:
        w = np.full(n, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        return w * (h / 3.0)
    w = np.full(n, h)
    w[0] = w[-1] = h / 2.0
    return w


def integrate(f: GridField) -> float:
    """Quadrature of the field over its grid (Simpson; trapezoid when n is even)."""
    return float(quadrature_weights(f.grid) @ f.values)


def _diff1(v: np.ndarray, h: float) -> np.ndarray:
    d = np.empty_like(v)
    d[2:-2] = (-v[4:] + 8.0 * v[3:-1] - 8.0 * v[1:-3] + v[:-4]) / (12.0 * h)
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    d[1] = (v[2] - v[0]) / (2.0 * h)
    d[-2] = (v[-1] - v[-3]) / (2.0 * h)
    d[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return d


def _diff2(v: np.ndarray, h: float) -> np.ndarray:
    h2 = h * h
    d = np.empty_like(v)
    d[2:-2] = (-v[4:] + 16.0 * v[3:-1] - 30.0 * v[2:-2] + 16.0 * v[1:-3] - v[:-4]) / (12.0 * h2)
    d[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
    d[1] = (v[0] - 2.0 * v[1] + v[2]) / h2
    d[-2] = (v[-3] - 2.0 * v[-2] + v[-1]) / h2
    d[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h2
    return d


def derivative(f: GridField, order: int) -> GridField:
    """First or second derivative: 4th-order central stencils in the interior,
    2nd-order one-sided at the edges.  Requires n >= 5."""
    if order not in (1, 2):
        raise ValueError(f"derivative order must be 1 or 2, got {order}")
    if f.grid.n < 5:
        raise ValueError("derivative needs at least 5 grid points")
    d = _diff1(f.values, f.grid.h) if order == 1 else _diff2(f.values, f.grid.h)
    return GridField(f.grid, d)


@dataclass
class DiffusionSpec:
    """A time-independent diffusion dX = b(X) dt + sqrt(2 D) dW on an open interval.

    Parameters
    ----------
    D : float
        Diffusion coefficient, > 0 (units length^2 / time).
    drift : callable
        Vectorized drift b(x); must accept numpy arrays.
    domain : Interval
        Open interval the process lives on.
    drift_potential : callable, optional
        Potential Phi with b = 2 D Phi'.  Enables fast, overflow-safe
        boundary classification and the endpoint terms of path reweighting.
    drift_d1, drift_d2 : callable, optional
        Analytic first/second drift derivatives.  When present they are used
        for acceleration fields and potential reconstruction; finite
        differences cannot track drifts that blow up near nodes.
    """

    D: float
    drift: Callable
    domain: Interval = FULL_LINE
    drift_potential: Callable | None = None
    drift_d1: Callable | None = None
    drift_d2: Callable | None = None

    def __post_init__(self) -> None:
        if not self.D > 0:
            raise ValueError(f"diffusion coefficient must be positive, got {self.D}")

    def check_potential(self, xs: np.ndarray, tol: float = 1e-6, h: float = 1e-6) -> float:
        """Max |b(x) - 2 D Phi'(x)| over xs, Phi' by central difference.

        Raises ValueError when the mismatch exceeds ``tol``.
        """
        if self.drift_potential is None:
            raise ValueError("spec carries no drift potential")
        xs = np.asarray(xs, dtype=float)
        phi = self.drift_potential
        dphi = (np.asarray(phi(xs + h)) - np.asarray(phi(xs - h))) / (2.0 * h)
        err = float(np.max(np.abs(np.asarray(self.drift(xs)) - 2.0 * self.D * dphi)))
        if err > tol:
            raise ValueError(f"drift and potential disagree: max |b - 2D Phi'| = {err:.3e} > {tol:g}")
        return err
