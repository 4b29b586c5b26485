"""Weak Euler-Maruyama simulation of dX = b(X) dt + sqrt(2D) dW for drifts that
blow up at natural boundaries.

Proposed steps that land outside the open domain, or jump across a registered
node, are rejected and retried at half the step size (the step is completed in
smaller sub-steps so the whole ensemble stays time-aligned).  After 20
halvings a path is flagged and frozen; the flagged fraction is reported and
the run is marked unreliable above 0.1%.

First-passage detection applies the same per-slice bridge crossing-probability
correction as the path-integral module when the probe level is interior to the
domain.  At a domain endpoint the rejection wall already enforces
non-crossing, and the driftless-bridge formula would fire spuriously against
the singular repulsive drift, so only discrete crossings are counted there.

Chunked RNG streams derive from (seed, chunk index); fixed seed and chunk
layout reproduce every array bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import DiffusionSpec, DomainError, GridField, UniformGrid

__all__ = [
    "SimConfig",
    "SimResult",
    "PassageReport",
    "simulate",
    "first_passage_fraction",
    "empirical_density",
]

MAX_HALVINGS = 20
DEFAULT_CHUNK = 1 << 15


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(chunk,)))


def _chunk_sizes(n: int, chunk_size: int) -> list[int]:
    full, rest = divmod(n, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


@dataclass
class SimConfig:
    """Step size, horizon, ensemble size, seed; node_guard is the margin used
    when testing proposals against boundaries and nodes."""

    dt: float
    T: float
    n_paths: int
    seed: int
    node_guard: float = 0.0

    def __post_init__(self) -> None:
        if not (0 < self.dt < self.T):
            raise ValueError("need 0 < dt < T")
        if self.n_paths < 1:
            raise ValueError("need n_paths >= 1")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * steps:
            raise ValueError("T must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class SimResult:
    terminals: np.ndarray
    n_flagged: int
    seed: int
    paths: np.ndarray | None = None

    @property
    def flagged_fraction(self) -> float:
        return self.n_flagged / len(self.terminals)

    @property
    def unreliable(self) -> bool:
        return self.flagged_fraction > 1e-3


@dataclass
class PassageReport:
    target: float
    fraction_hit: float
    mean_hit_time: float | None
    n_paths: int
    n_hits: int


def _bad_proposal(x, prop, lo, hi, nodes, guard):
    bad = np.zeros(x.shape, dtype=bool)
    if math.isfinite(lo):
        bad |= prop <= lo + guard
    if math.isfinite(hi):
        bad |= prop >= hi - guard
    for z in nodes:
        bad |= (x - z) * (prop - z) <= 0.0
    return bad


def _advance_chunk(
    spec: DiffusionSpec,
    x: np.ndarray,
    frozen: np.ndarray,
    rng: np.random.Generator,
    dt: float,
    nodes: Sequence[float],
    guard: float,
    monitor: Callable | None,
) -> None:
    """Advance every unfrozen path by one full step dt, subdividing on rejection.

    The whole ensemble first attempts the full step at once; only paths whose
    proposal was rejected enter the halved-substep loop, so the common case
    stays a handful of vectorized operations.  monitor(x_before, x_after,
    delta, uniforms, idx) is called on every accepted (sub-)step.
    """
    lo, hi = spec.domain.r1, spec.domain.r2
    two_d = 2.0 * spec.D
    xi = rng.standard_normal(x.shape[0])
    u = rng.random(x.shape[0]) if monitor is not None else None
    with np.errstate(all="ignore"):
        prop = x + np.asarray(spec.drift(x), dtype=float) * dt + math.sqrt(two_d * dt) * xi
    bad = (_bad_proposal(x, prop, lo, hi, nodes, guard) | ~np.isfinite(prop)) & ~frozen
    ok = ~bad & ~frozen
    if monitor is not None and ok.any():
        idx = np.nonzero(ok)[0]
        monitor(x[idx], prop[idx], np.full(idx.size, dt), u[idx], idx)
    x[ok] = prop[ok]

    strag = np.nonzero(bad)[0]
    if strag.size == 0:
        return
    remaining = np.full(strag.size, dt)
    trial = np.full(strag.size, 0.5 * dt)
    halvings = np.ones(strag.size, dtype=np.int64)
    live = np.ones(strag.size, dtype=bool)
    while True:
        act = np.nonzero(live & (remaining > 1e-12 * dt))[0]
        if act.size == 0:
            break
        gi = strag[act]
        delta = np.minimum(trial[act], remaining[act])
        xi2 = rng.standard_normal(act.size)
        u2 = rng.random(act.size) if monitor is not None else None
        xa = x[gi]
        with np.errstate(all="ignore"):
            prop2 = xa + np.asarray(spec.drift(xa), dtype=float) * delta + np.sqrt(two_d * delta) * xi2
        bad2 = _bad_proposal(xa, prop2, lo, hi, nodes, guard) | ~np.isfinite(prop2)
        good2 = ~bad2
        if monitor is not None and good2.any():
            monitor(xa[good2], prop2[good2], delta[good2], u2[good2], gi[good2])
        x[gi[good2]] = prop2[good2]
        remaining[act[good2]] -= delta[good2]
        abad = act[bad2]
        if abad.size:
            trial[abad] *= 0.5
            halvings[abad] += 1
            stuck = abad[halvings[abad] > MAX_HALVINGS]
            live[stuck] = False
            frozen[strag[stuck]] = True


def simulate(
    spec: DiffusionSpec,
    x0: float,
    cfg: SimConfig,
    *,
    nodes: Sequence[float] = (),
    keep_paths: bool = False,
    chunk_size: int = DEFAULT_CHUNK,
) -> SimResult:
    """Euler-Maruyama ensemble started at x0; see the module docstring for the
    step-rejection policy near boundaries and nodes."""
    if not spec.domain.contains(x0):
        raise DomainError(f"x0 = {x0} not interior to the domain")
    b0 = float(spec.drift(np.asarray([x0]))[0])
    if not math.isfinite(b0):
        raise DomainError(f"drift not finite at x0 = {x0}")
    n_steps = cfg.n_steps
    terminals = np.empty(cfg.n_paths)
    flagged_total = 0
    paths = np.empty((cfg.n_paths, n_steps + 1)) if keep_paths else None
    offset = 0
    for chunk, size in enumerate(_chunk_sizes(cfg.n_paths, chunk_size)):
        rng = _chunk_rng(cfg.seed, chunk)
        x = np.full(size, float(x0))
        frozen = np.zeros(size, dtype=bool)
        if keep_paths:
            paths[offset : offset + size, 0] = x
        for k in range(n_steps):
            _advance_chunk(spec, x, frozen, rng, cfg.dt, nodes, cfg.node_guard, None)
            if keep_paths:
                paths[offset : offset + size, k + 1] = x
        terminals[offset : offset + size] = x
        flagged_total += int(frozen.sum())
        offset += size
    return SimResult(terminals=terminals, n_flagged=flagged_total, seed=cfg.seed, paths=paths)


def first_passage_fraction(
    spec: DiffusionSpec,
    x0: float,
    R: float,
    cfg: SimConfig,
    *,
    nodes: Sequence[float] = (),
    chunk_size: int = DEFAULT_CHUNK,
) -> PassageReport:
    """Fraction of paths whose trajectory crosses level R before T.

    Discrete sign-change detection plus, for R interior to the domain, the
    per-sub-step bridge crossing probability exp[-(x_i - R)(x_{i+1} - R)/(D delta)].
    """
    if R == x0:
        raise ValueError("the probe level must differ from the starting point")
    if not spec.domain.contains(x0):
        raise DomainError(f"x0 = {x0} not interior to the domain")
    interior = bool(spec.domain.contains(R))
    n_steps = cfg.n_steps
    n_hits_total = 0
    hit_time_sum = 0.0
    for chunk, size in enumerate(_chunk_sizes(cfg.n_paths, chunk_size)):
        rng = _chunk_rng(cfg.seed, chunk)
        x = np.full(size, float(x0))
        frozen = np.zeros(size, dtype=bool)
        hit = np.zeros(size, dtype=bool)
        hit_time = np.full(size, np.nan)
        t_now = 0.0

        def monitor(xa, xb, delta, u, idx):
            a = xa - R
            bb = xb - R
            crossed = a * bb <= 0.0
            if interior:
                with np.errstate(over="ignore", invalid="ignore"):
                    p = np.exp(-a * bb / (spec.D * delta))
                crossed |= u < p
            new = crossed & ~hit[idx]
            sel = idx[new]
            hit[sel] = True
            # recorded at full-step resolution; adequate for a mean
            hit_time[sel] = t_now + cfg.dt

        for k in range(n_steps):
            _advance_chunk(spec, x, frozen, rng, cfg.dt, nodes, cfg.node_guard, monitor)
            t_now += cfg.dt
        n_hits_total += int(hit.sum())
        hit_time_sum += float(np.nansum(hit_time))
    fraction = n_hits_total / cfg.n_paths
    mean_time = hit_time_sum / n_hits_total if n_hits_total else None
    return PassageReport(
        target=R,
        fraction_hit=fraction,
        mean_hit_time=mean_time,
        n_paths=cfg.n_paths,
        n_hits=n_hits_total,
    )


def empirical_density(samples: np.ndarray, grid: UniformGrid) -> tuple[GridField, float]:
    """Normalized histogram on the grid (bins centered on grid points).

    Returns the field (bin mass / bin width, so it integrates to at most 1)
    together with the sample mass that fell outside the grid.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty sample")
    if samples.size < 1000:
        raise ValueError(f"need at least 1000 samples for a density estimate, got {samples.size}")
    h = grid.h
    edges = np.linspace(grid.lo - h / 2.0, grid.hi + h / 2.0, grid.n + 1)
    counts, _ = np.histogram(samples, bins=edges)
    values = counts / (samples.size * h)
    outside = 1.0 - counts.sum() / samples.size
    return GridField(grid, values), float(outside)
