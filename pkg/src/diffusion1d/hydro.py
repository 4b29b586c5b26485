"""Hydrodynamic representation of a stationary diffusion and its conservation laws.

From a density rho and drift b the module assembles

    b* = b - 2 D grad(ln rho)      backward drift
    v  = (b + b*) / 2              current velocity
    u  = (b - b*) / 2              osmotic velocity ( = D grad ln rho )
    Q  = 2 D^2 Lap(sqrt rho) / sqrt rho
    P  = D^2 rho Lap(ln rho)       with grad Q = grad P / rho
    Omega = b^2 / 2 + D grad b     (stationary reconstruction)

Points where rho falls below the positivity floor, or within three grid
spacings of a registered node, are masked rather than clamped: boundary
artifacts stay visible instead of being hidden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    DiffusionSpec,
    DomainError,
    GridField,
    UniformGrid,
    _diff1,
    _diff2,
    quadrature_weights,
)

__all__ = [
    "HydroFields",
    "MaskedField",
    "MomentumBalance",
    "build_hydro",
    "acceleration_field",
    "continuity_residual",
    "ehrenfest_check",
    "momentum_balance",
]

FLOOR = 1e-12
NODE_MASK_WIDTH = 3  # grid spacings


@dataclass
class MaskedField:
    field: GridField
    valid: np.ndarray  # True where the value is meaningful


@dataclass
class HydroFields:
    grid: UniformGrid
    rho: GridField
    b: GridField
    b_star: GridField
    v: GridField
    u: GridField
    Q: GridField
    P: GridField
    Omega: GridField
    valid: np.ndarray
    D: float


def _node_mask(x: np.ndarray, nodes: Sequence[float], h: float, width: int) -> np.ndarray:
    keep = np.ones_like(x, dtype=bool)
    for z in nodes:
        keep &= np.abs(x - z) > width * h
    return keep


def _runs(valid: np.ndarray, min_len: int = 5):
    """Contiguous True runs of at least min_len points."""
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return
    breaks = np.nonzero(np.diff(idx) > 1)[0]
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [idx.size - 1]))
    for a, b in zip(starts, ends):
        if idx[b] - idx[a] + 1 >= min_len:
            yield slice(idx[a], idx[b] + 1)


def masked_derivative(values: np.ndarray, valid: np.ndarray, h: float, order: int):
    """Finite differences run separately on each contiguous valid segment;
    segments shorter than the stencil are dropped from the output mask."""
    out = np.zeros_like(values)
    ok = np.zeros_like(valid)
    fd = _diff1 if order == 1 else _diff2
    for sl in _runs(valid):
        out[sl] = fd(values[sl], h)
        ok[sl] = True
    return out, ok


def interior_mask(valid: np.ndarray, trim: int) -> np.ndarray:
    """Erode every contiguous valid run by trim points on each side.

    Useful before pointwise assertions: run edges fall back to one-sided
    2nd-order stencils, which cannot match interior 4th-order accuracy."""
    out = np.zeros_like(valid)
    for sl in _runs(valid, min_len=2 * trim + 1):
        out[sl.start + trim : sl.stop - trim] = True
    return out


def _eval_drift(fn, x):
    with np.errstate(all="ignore"):
        vals = np.asarray(fn(x), dtype=float)
    return vals


def build_hydro(
    spec: DiffusionSpec,
    rho: GridField,
    *,
    nodes: Sequence[float] = (),
    floor: float = FLOOR,
) -> HydroFields:
    """Assemble all hydrodynamic fields from a density sampled on a grid.

    Raises DomainError when no usable window remains above the floor.
    """
    grid = rho.grid
    x = grid.points
    h = grid.h
    valid = (rho.values > floor) & _node_mask(x, nodes, h, NODE_MASK_WIDTH)
    valid &= np.asarray(spec.domain.contains(x), dtype=bool)
    if not np.any(valid):
        raise DomainError("density below the positivity floor everywhere on the grid")

    b_vals = np.where(valid, _eval_drift(spec.drift, np.where(valid, x, x[np.argmax(valid)])), 0.0)
    valid &= np.isfinite(b_vals)

    ln_rho = np.where(valid, np.log(np.where(valid, rho.values, 1.0)), 0.0)
    sq_rho = np.where(valid, np.sqrt(np.where(valid, rho.values, 1.0)), 0.0)

    dln, ok1 = masked_derivative(ln_rho, valid, h, 1)
    d2ln, ok2 = masked_derivative(ln_rho, valid, h, 2)
    d2sq, ok3 = masked_derivative(sq_rho, valid, h, 2)
    valid = valid & ok1 & ok2 & ok3
    if not np.any(valid):
        raise DomainError("no valid window of at least 5 points above the floor")

    D = spec.D
    u = np.where(valid, D * dln, 0.0)
    b_star = np.where(valid, b_vals - 2.0 * D * dln, 0.0)
    b_vals = np.where(valid, b_vals, 0.0)
    v = 0.5 * (b_vals + b_star)
    q = np.where(valid, 2.0 * D * D * d2sq / np.where(valid, sq_rho, 1.0), 0.0)
    p = np.where(valid, D * D * rho.values * d2ln, 0.0)

    if spec.drift_d1 is not None:
        bp = np.where(valid, _eval_drift(spec.drift_d1, np.where(valid, x, x[np.argmax(valid)])), 0.0)
    else:
        bp, okp = masked_derivative(b_vals, valid, h, 1)
        valid = valid & okp
    omega = np.where(valid, 0.5 * b_vals * b_vals + D * bp, 0.0)

    return HydroFields(
        grid=grid,
        rho=rho,
        b=GridField(grid, b_vals),
        b_star=GridField(grid, b_star),
        v=GridField(grid, v),
        u=GridField(grid, u),
        Q=GridField(grid, q),
        P=GridField(grid, p),
        Omega=GridField(grid, omega),
        valid=valid,
        D=D,
    )


def acceleration_field(
    spec: DiffusionSpec,
    grid: UniformGrid,
    *,
    nodes: Sequence[float] = (),
) -> MaskedField:
    """Local acceleration b grad(b) + D Lap(b), masked within 3h of registered nodes.

    Uses the spec's analytic drift derivatives when present; finite differences
    of a drift that blows up near nodes cannot reach tight tolerances, so the
    analytic path is strongly preferred.
    """
    x = grid.points
    valid = _node_mask(x, nodes, grid.h, NODE_MASK_WIDTH)
    valid &= np.asarray(spec.domain.contains(x), dtype=bool)
    safe_x = np.where(valid, x, x[np.argmax(valid)] if np.any(valid) else 0.0)
    b = _eval_drift(spec.drift, safe_x)
    valid &= np.isfinite(b)
    if spec.drift_d1 is not None and spec.drift_d2 is not None:
        d1 = _eval_drift(spec.drift_d1, safe_x)
        d2 = _eval_drift(spec.drift_d2, safe_x)
        valid &= np.isfinite(d1) & np.isfinite(d2)
    else:
        b_masked = np.where(valid, b, 0.0)
        d1, ok1 = masked_derivative(b_masked, valid, grid.h, 1)
        d2, ok2 = masked_derivative(b_masked, valid, grid.h, 2)
        valid &= ok1 & ok2
    acc = np.where(valid, b * d1 + spec.D * d2, 0.0)
    acc = np.where(np.isfinite(acc), acc, 0.0)
    return MaskedField(GridField(grid, acc), valid)


def continuity_residual(
    rhos: Sequence[GridField],
    vs: Sequence[GridField],
    times: Sequence[float],
    *,
    edge_trim: int = 2,
) -> float:
    """max | d rho / dt + grad(rho v) | over interior time slices and grid points."""
    if len(rhos) < 3 or len(rhos) != len(vs) or len(rhos) != len(times):
        raise ValueError("need matching rho, v, t sequences with at least 3 slices")
    grid = rhos[0].grid
    for f in list(rhos) + list(vs):
        if f.grid != grid:
            raise ValueError("all fields must share one grid")
    h = grid.h
    sl = slice(edge_trim, grid.n - edge_trim)
    worst = 0.0
    for k in range(1, len(rhos) - 1):
        dt_rho = (rhos[k + 1].values - rhos[k - 1].values) / (times[k + 1] - times[k - 1])
        flux = _diff1(rhos[k].values * vs[k].values, h)
        worst = max(worst, float(np.max(np.abs(dt_rho[sl] + flux[sl]))))
    return worst


def _masked_quadrature(grid: UniformGrid, integrand: np.ndarray, valid: np.ndarray) -> float:
    w = quadrature_weights(grid)
    return float(np.sum(w[valid] * integrand[valid]))


def ehrenfest_check(
    hydro: HydroFields,
    *,
    lo: float | None = None,
    hi: float | None = None,
    stationary: bool = True,
    stationary_tol: float = 1e-6,
    mass_tol: float = 1e-3,
) -> tuple[float, float]:
    """(E[grad Q], E[grad Omega]) over the valid window, optionally clipped to [lo, hi].

    Clipping matters for nodal components: finite differences of ln rho lose
    accuracy approaching a node (the field behaves like a log singularity), so
    expectation windows should keep a few dozen spacings of distance from it.

    For stationary fields also asserts the windowed identity
    E[v grad v] = E[grad(Omega - Q)] within stationary_tol.
    """
    rho = hydro.rho.values
    x = hydro.grid.points
    clip = np.ones_like(x, dtype=bool)
    if lo is not None:
        clip &= x >= lo
    if hi is not None:
        clip &= x <= hi
    mass = _masked_quadrature(hydro.grid, rho, hydro.valid)
    if abs(mass - 1.0) > mass_tol:
        raise ValueError(f"density mass over the valid window is {mass!r}; normalize rho first")
    grad_q, okq = masked_derivative(hydro.Q.values, hydro.valid, hydro.grid.h, 1)
    grad_om, oko = masked_derivative(hydro.Omega.values, hydro.valid, hydro.grid.h, 1)
    ok = hydro.valid & okq & oko & clip
    lhs = _masked_quadrature(hydro.grid, rho * grad_q, ok)
    rhs = _masked_quadrature(hydro.grid, rho * grad_om, ok)
    if stationary:
        grad_v, okv = masked_derivative(hydro.v.values, hydro.valid, hydro.grid.h, 1)
        ok2 = ok & okv
        conv = _masked_quadrature(hydro.grid, rho * hydro.v.values * grad_v, ok2)
        drive = _masked_quadrature(hydro.grid, rho * (grad_om - grad_q), ok2)
        if abs(conv - drive) > stationary_tol:
            raise RuntimeError(
                f"stationary balance violated: E[v grad v] = {conv:.3e}, "
                f"E[grad(Omega - Q)] = {drive:.3e}"
            )
    return lhs, rhs


@dataclass
class MomentumBalance:
    volume_force: float  # int_a^b rho grad(Omega)
    pressure_term: float  # P(a) - P(b)
    total: float
    cross_check: float  # int_a^b rho grad(Omega - Q)
    residual: float  # |total - cross_check|


def momentum_balance(hydro: HydroFields, alpha: float, beta: float) -> MomentumBalance:
    """Windowed momentum budget on [alpha, beta] (snapped to grid points)."""
    if not alpha < beta:
        raise ValueError("need alpha < beta")
    x = hydro.grid.points
    ia = int(np.argmin(np.abs(x - alpha)))
    ib = int(np.argmin(np.abs(x - beta)))
    if ib - ia < 5:
        raise ValueError("window too narrow: fewer than 5 grid points")
    if not np.all(hydro.valid[ia : ib + 1]):
        raise DomainError("window contains masked points (density below floor or near a node)")

    sub = UniformGrid(float(x[ia]), float(x[ib]), ib - ia + 1)
    w = quadrature_weights(sub)
    grad_q, _ = masked_derivative(hydro.Q.values, hydro.valid, hydro.grid.h, 1)
    grad_om, _ = masked_derivative(hydro.Omega.values, hydro.valid, hydro.grid.h, 1)
    rho = hydro.rho.values
    volume_force = float(np.sum(w * (rho * grad_om)[ia : ib + 1]))
    pressure_term = float(hydro.P.values[ia] - hydro.P.values[ib])
    cross = float(np.sum(w * (rho * (grad_om - grad_q))[ia : ib + 1]))
    total = volume_force + pressure_term
    return MomentumBalance(
        volume_force=volume_force,
        pressure_term=pressure_term,
        total=total,
        cross_check=cross,
        residual=abs(total - cross),
    )
