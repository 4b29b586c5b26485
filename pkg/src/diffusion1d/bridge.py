"""Bridge interpolation between two endpoint densities.

Given strictly positive endpoint densities rho_0, rho_T and a positive kernel
k, the marginal system

    theta*(x) int k(x,0,y,T) theta(y) w(y) dy = rho_0(x)
    theta(y)  int k(x,0,y,T) theta*(x) w(x) dx = rho_T(y)

is solved by alternating matrix scaling on the quadrature-discretized kernel.
Accuracy is controlled by the grid; the iteration is run to a sup-norm
residual on the marginal identities.  The pair (theta*, theta) is only
determined up to a scalar c -> (c theta*, theta/c); the gauge fixed here is a
unit weighted sum of theta*, recorded on the solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import DomainError, GridField, derivative, integrate, quadrature_weights
from .kernels import KernelOracle

__all__ = ["BridgeProblem", "BridgeSolution", "solve_bridge", "interpolate_density", "bridge_drift"]

_UNDERFLOW = 1e-290


@dataclass
class BridgeProblem:
    """Endpoint densities (one shared grid), horizon T, kernel and diffusion constant."""

    rho0: GridField
    rhoT: GridField
    T: float
    kernel: KernelOracle
    D: float

    def __post_init__(self) -> None:
        if self.rho0.grid != self.rhoT.grid:
            raise ValueError("endpoint densities must share one grid")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        for name, f in (("rho0", self.rho0), ("rhoT", self.rhoT)):
            if np.any(f.values[1:-1] <= 0.0):
                raise ValueError(f"{name} must be strictly positive on the grid interior")
            mass = integrate(f)
            if abs(mass - 1.0) > 1e-8:
                raise ValueError(f"{name} integrates to {mass!r}, expected 1 within 1e-8")


@dataclass
class BridgeSolution:
    problem: BridgeProblem
    theta_star_0: GridField
    theta_T: GridField
    m: np.ndarray  # joint mass matrix; row sums ~ rho0*w, column sums ~ rhoT*w
    converged: bool
    iterations: int
    marginal_residual: float
    gauge: str = "unit-weighted-theta-star"


def _residuals(K, u, v, a, b) -> float:
    row = np.abs(u * (K @ v) - a).max()
    col = np.abs(v * (K.T @ u) - b).max()
    return float(max(row, col))


def _scale_linear(K, a, b, tol, max_iter):
    u = np.ones_like(a)
    v = np.ones_like(b)
    res = math.inf
    for it in range(1, max_iter + 1):
        Kv = K @ v
        if np.any(Kv <= 0.0) or not np.all(np.isfinite(Kv)):
            return None, None, it, res
        u = a / Kv
        KTu = K.T @ u
        if np.any(KTu <= 0.0) or not np.all(np.isfinite(KTu)):
            return None, None, it, res
        v = b / KTu
        if min(u.min(), v.min()) < _UNDERFLOW:
            return None, None, it, res
        res = _residuals(K, u, v, a, b)
        if res < tol:
            return u, v, it, res
    return u, v, max_iter, res


def _scale_log(K, a, b, tol, max_iter):
    logK = np.log(K)
    la, lb = np.log(a), np.log(b)
    lu = np.zeros_like(a)
    lv = np.zeros_like(b)
    res = math.inf
    for it in range(1, max_iter + 1):
        lu = la - logsumexp(logK + lv[None, :], axis=1)
        lv = lb - logsumexp(logK.T + lu[None, :], axis=1)
        u, v = np.exp(lu), np.exp(lv)
        res = _residuals(K, u, v, a, b)
        if res < tol:
            return u, v, it, res
    return np.exp(lu), np.exp(lv), max_iter, res


def solve_bridge(problem: BridgeProblem, tol: float = 1e-10, max_iter: int = 20000) -> BridgeSolution:
    """Alternating scaling until the sup-norm marginal residual drops below tol.

    Falls back to log-space iteration if any scaling vector underflows
    (Gaussian tails on wide truncations).  On max_iter exhaustion the best
    iterate is returned with converged=False.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = problem.rho0.grid
    x = grid.points
    w = quadrature_weights(grid)
    K = np.asarray(problem.kernel(x[:, None], 0.0, x[None, :], problem.T), dtype=float)
    if np.any(K <= 0.0) or not np.all(np.isfinite(K)):
        raise DomainError("kernel must be strictly positive and finite on grid x grid")
    a = problem.rho0.values * w
    b = problem.rhoT.values * w

    u, v, it, res = _scale_linear(K, a, b, tol, max_iter)
    if u is None:
        u, v, it, res = _scale_log(K, a, b, tol, max_iter)

    # gauge: unit weighted sum of theta*  (sum theta* w = sum u)
    scale = float(np.sum(u))
    u = u / scale
    v = v * scale

    m = u[:, None] * K * v[None, :]
    return BridgeSolution(
        problem=problem,
        theta_star_0=GridField(grid, u / w),
        theta_T=GridField(grid, v / w),
        m=m,
        converged=res < tol,
        iterations=it,
        marginal_residual=res,
    )


def _theta_star_at(sol: BridgeSolution, t: float) -> np.ndarray:
    """theta*(., t): propagation of theta*(., 0) forward to t."""
    grid = sol.problem.rho0.grid
    x = grid.points
    w = quadrature_weights(grid)
    if t == 0.0:
        return sol.theta_star_0.values
    K = np.asarray(sol.problem.kernel(x[:, None], 0.0, x[None, :], t))
    return K.T @ (sol.theta_star_0.values * w)


def _theta_at(sol: BridgeSolution, t: float) -> np.ndarray:
    """theta(., t): propagation of theta(., T) backward from T."""
    grid = sol.problem.rho0.grid
    x = grid.points
    w = quadrature_weights(grid)
    T = sol.problem.T
    if t == T:
        return sol.theta_T.values
    K = np.asarray(sol.problem.kernel(x[:, None], 0.0, x[None, :], T - t))
    return K @ (sol.theta_T.values * w)


def interpolate_density(sol: BridgeSolution, t: float) -> GridField:
    """rho(., t) = theta*(., t) * theta(., t) for t in [0, T]."""
    if not sol.converged:
        raise RuntimeError("bridge solution did not converge; interpolation undefined")
    if not 0.0 <= t <= sol.problem.T:
        raise DomainError(f"t = {t} outside [0, {sol.problem.T}]")
    return GridField(sol.problem.rho0.grid, _theta_star_at(sol, t) * _theta_at(sol, t))


def bridge_drift(sol: BridgeSolution, t: float, floor: float = 1e-300) -> GridField:
    """Drift of the interpolating diffusion, 2 D (grad theta / theta)(., t)."""
    if not 0.0 <= t <= sol.problem.T:
        raise DomainError(f"t = {t} outside [0, {sol.problem.T}]")
    theta = _theta_at(sol, t)
    if np.any(theta[1:-1] <= floor):
        raise DomainError("theta fell below the positivity floor on the grid interior")
    grid = sol.problem.rho0.grid
    dtheta = derivative(GridField(grid, theta), 1)
    return GridField(grid, 2.0 * sol.problem.D * dtheta.values / theta)
