"""Closed-form kernel oracles and transition densities built from them.

Oracles are immutable after construction; evaluation is reentrant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.special import ive

from .core import FULL_LINE, HALF_LINE, DomainError, GridField, Interval, UniformGrid, integrate

__all__ = [
    "KernelOracle",
    "TransitionDensity",
    "heat_kernel",
    "mehler_kernel",
    "bessel_density",
    "make_transition_density",
    "backward_density",
    "check_semigroup",
]

_MIN_DT = 1e-12


def _check_dt(s, t) -> None:
    if np.any(np.asarray(t) - np.asarray(s) <= _MIN_DT):
        raise DomainError(f"kernel evaluation needs t - s > {_MIN_DT:g}")


@dataclass(frozen=True)
class KernelOracle:
    """Evaluable two-point kernel k(y, s, x, t) with a declared domain.

    Homogeneous oracles satisfy k(y, s, x, t) = k(y, 0, x, t - s).
    """

    fn: Callable
    domain: Interval
    homogeneous: bool
    D: float

    def __call__(self, y, s, x, t):
        _check_dt(s, t)
        return self.fn(y, s, x, t)


@dataclass(frozen=True)
class TransitionDensity:
    """Evaluable p(y, s, x, t) normalized over x in the domain for t > s."""

    fn: Callable
    domain: Interval

    def __call__(self, y, s, x, t):
        _check_dt(s, t)
        return self.fn(y, s, x, t)


def heat_kernel(D: float) -> KernelOracle:
    """Free heat kernel on the line: (4 pi D dt)^(-1/2) exp(-(x-y)^2 / (4 D dt))."""
    if not D > 0:
        raise ValueError("D must be positive")

    def fn(y, s, x, t):
        dt = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
        return np.exp(-((np.asarray(x) - np.asarray(y)) ** 2) / (4.0 * D * dt)) / np.sqrt(
            4.0 * math.pi * D * dt
        )

    return KernelOracle(fn, FULL_LINE, homogeneous=True, D=D)


def mehler_kernel() -> KernelOracle:
    """Harmonic-potential kernel in rescaled variables (D = 1/2).

    This is the symmetric kernel of exp(-t H) with H = -Laplacian/2 + (x^2 - 1)/2,
    whose ground state has energy zero:

        k(y, 0, x, t) = e^{t/2} (2 pi sinh t)^{-1/2}
                        exp[-((x^2 + y^2) cosh t - 2 x y) / (2 sinh t)]

    The prefactor equals pi^{-1/2} (1 - e^{-2t})^{-1/2} identically.
    """

    def fn(y, s, x, t):
        dt = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        sh = np.sinh(dt)
        ch = np.cosh(dt)
        expo = dt / 2.0 - ((x * x + y * y) * ch - 2.0 * x * y) / (2.0 * sh)
        return np.exp(expo) / np.sqrt(2.0 * math.pi * sh)

    return KernelOracle(fn, FULL_LINE, homogeneous=True, D=0.5)


# Series for the modified Bessel function of the first kind used to
# cross-check scipy's implementation at small argument:
#   I_0(a) = sum_j a^(2j) / (2^(2j) (j!)^2)
def bessel_i0_series(a, terms: int = 30):
    a = np.asarray(a, dtype=float)
    out = np.zeros_like(a)
    term = np.ones_like(a)
    for j in range(terms):
        if j > 0:
            term = term * (a * a / 4.0) / (j * j)
        out = out + term
    return out


def bessel_density(a: float) -> TransitionDensity:
    """Transition density of the half-line diffusion with drift D (1 + 2a) / x.

    In rescaled variables (D = 1/2) the density is

        p(t; x0, x) = C (x/t) (x/x0)^a exp[-(x^2 + x0^2) / (2t)] I_a(x x0 / t)

    with C pinned numerically at construction (it is 1 for the correctly
    weighted form; the product with the exponential is evaluated through the
    scaled Bessel function so large arguments cannot overflow).  Both
    boundaries, 0 and +inf, are inaccessible for a >= 0.
    """
    if a < 0:
        raise ValueError("bessel_density needs a >= 0")

    def shape(dt, x0, x):
        z = x * x0 / dt
        return (x / dt) * (x / x0) ** a * np.exp(-((x - x0) ** 2) / (2.0 * dt)) * ive(a, z)

    # normalization constant: the shape already integrates to one; pin it
    # numerically anyway so any deviation shows up at construction time
    norm, _ = quad(lambda u: float(shape(1.0, 1.0, u)), 0.0, np.inf, limit=200)

    def fn(y, s, x, t):
        dt = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if np.any(x <= 0.0) or np.any(y <= 0.0):
            raise DomainError("bessel density is defined for strictly positive positions")
        return shape(dt, y, x) / norm

    return TransitionDensity(fn, HALF_LINE)


def make_transition_density(k: KernelOracle, theta: Callable) -> TransitionDensity:
    """Forward transition density p = k(y,s,x,t) Theta(x,t) / Theta(y,s).

    theta(x, t) must be strictly positive on the kernel's domain interior.
    """

    def fn(y, s, x, t):
        num = np.asarray(theta(x, t), dtype=float)
        den = np.asarray(theta(y, s), dtype=float)
        # num == 0 is tolerated as tail underflow (p = 0); sign changes are not
        if np.any(num < 0.0) or np.any(den <= 0.0):
            raise DomainError("theta must stay positive on the kernel domain")
        return k(y, s, x, t) * num / den

    return TransitionDensity(fn, k.domain)


def backward_density(p: TransitionDensity, rho: Callable) -> Callable:
    """Backward density p*(y,s,x,t) = p(y,s,x,t) rho(y,s) / rho(x,t)."""

    def fn(y, s, x, t):
        num = np.asarray(rho(y, s), dtype=float)
        den = np.asarray(rho(x, t), dtype=float)
        if np.any(num < 0.0) or np.any(den <= 0.0):
            raise DomainError("rho must stay positive where the backward density is evaluated")
        return p(y, s, x, t) * num / den

    return fn


def check_semigroup(
    k: KernelOracle,
    s: float,
    u: float,
    t: float,
    y: float,
    x: float,
    *,
    lo: float | None = None,
    hi: float | None = None,
    n: int = 4001,
) -> float:
    """| int k(y,s,z,u) k(z,u,x,t) dz  -  k(y,s,x,t) |.

    The z-integration window defaults to a wide bracket around y and x,
    clipped to the kernel's domain.
    """
    if not (s < u < t):
        raise ValueError(f"need s < u < t, got {s}, {u}, {t}")
    pad = 10.0 * max(1.0, math.sqrt(2.0 * k.D * (t - s)))
    if lo is None:
        lo = min(y, x) - pad
    if hi is None:
        hi = max(y, x) + pad
    lo = max(lo, k.domain.r1 + 1e-9) if math.isfinite(k.domain.r1) else lo
    hi = min(hi, k.domain.r2 - 1e-9) if math.isfinite(k.domain.r2) else hi
    grid = UniformGrid(lo, hi, n if n % 2 == 1 else n + 1)
    z = grid.points
    prod = GridField(grid, np.asarray(k(y, s, z, u)) * np.asarray(k(z, u, x, t)))
    return float(abs(integrate(prod) - float(k(y, s, x, t))))
