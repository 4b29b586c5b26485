"""Boundary classification for one-dimensional diffusions.

An endpoint of the state interval is *natural* when it can be reached neither
from the interior nor from outside in finite time.  The test used here is
Lebesgue integrability of the Hille functions toward the endpoint:

    L1(x) = exp[-(1/D) int_{x0}^{x} b(y) dy]
    L2(x) = L1(x) * int_{x0}^{x} dz / L1(z)

L1 non-integrable            -> natural repulsive
L1 integrable, L2 not        -> natural attractive
both integrable              -> not natural

Integrability is decided numerically on a geometric cutoff sequence; all
accumulation runs in log space so exploding integrands cannot overflow.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, quad
from scipy.special import logsumexp

from .core import DiffusionSpec, DomainError, GridField

__all__ = [
    "BoundaryKind",
    "BoundaryClass",
    "InconclusiveError",
    "TransmissionKind",
    "Transmission",
    "hille_l1",
    "hille_l2",
    "classify_boundary",
    "transmission_at_node",
]

# exp() overflows past ~709.8; stay clear of it
_LOG_GUARD = 690.0


class InconclusiveError(RuntimeError):
    """The cutoff sequence neither converged nor reached the divergence cap."""

    def __init__(self, integral: str, endpoint: float, steps: int):
        self.integral = integral
        super().__init__(
            f"integrability test for {integral} toward endpoint {endpoint} "
            f"inconclusive after {steps} cutoff steps"
        )


class BoundaryKind(enum.Enum):
    NATURAL_REPULSIVE = "NaturalRepulsive"
    NATURAL_ATTRACTIVE = "NaturalAttractive"
    NOT_NATURAL = "NotNatural"


@dataclass
class BoundaryDiagnostics:
    endpoint: float
    x0: float
    cutoffs: list[float] = field(default_factory=list)
    l1_increments: list[float] = field(default_factory=list)
    l2_increments: list[float] = field(default_factory=list)
    l1_total: float = 0.0
    l2_total: float = 0.0
    l1_verdict: str | None = None  # "integrable" | "divergent"
    l2_verdict: str | None = None


@dataclass
class BoundaryClass:
    kind: BoundaryKind
    diagnostics: BoundaryDiagnostics


def _log_l1(spec: DiffusionSpec, x0: float, x: float) -> float:
    """log L1(x) = -(1/D) int_{x0}^{x} b; closed form -2 [Phi(x)-Phi(x0)] when Phi is known."""
    if spec.drift_potential is not None:
        phi = spec.drift_potential
        val = -2.0 * (float(phi(x)) - float(phi(x0)))
    else:
        ib, _ = quad(lambda y: float(spec.drift(y)), x0, x, epsabs=1e-12, epsrel=1e-12, limit=200)
        val = -ib / spec.D
    if not math.isfinite(val):
        raise DomainError(f"drift not integrable on [{min(x0, x)}, {max(x0, x)}]")
    return val


def hille_l1(spec: DiffusionSpec, x0: float, x: float) -> float:
    """L1 at x relative to base point x0.  Both points must lie inside spec.domain."""
    for p in (x0, x):
        if not spec.domain.contains(p):
            raise DomainError(f"point {p} outside domain ({spec.domain.r1}, {spec.domain.r2})")
    logv = _log_l1(spec, x0, x)
    if logv > _LOG_GUARD:
        raise OverflowError(f"L1({x}) overflows (log value {logv:.1f})")
    return math.exp(logv)


def hille_l2(spec: DiffusionSpec, x0: float, x: float) -> float:
    """L2(x) = L1(x) * int_{x0}^{x} dz / L1(z)."""
    log_l1x = _log_l1(spec, x0, x)

    def inv_l1(z: float) -> float:
        g = -_log_l1(spec, x0, z)
        if g > _LOG_GUARD:
            raise OverflowError(f"1/L1({z}) overflows during L2 quadrature")
        return math.exp(g)

    inner, _ = quad(inv_l1, x0, x, epsabs=1e-12, epsrel=1e-12, limit=200)
    val = math.exp(log_l1x) * inner if log_l1x <= _LOG_GUARD else math.inf
    if not math.isfinite(val):
        raise OverflowError(f"L2({x}) overflows")
    return float(val)


class _IntegralTracker:
    """Declares an integral integrable or divergent from its shell increments."""

    def __init__(self, name: str, rel_tol: float, cap: float, consec_needed: int = 3):
        self.name = name
        self.rel_tol = rel_tol
        self.cap = cap
        self.consec_needed = consec_needed
        self.total = 0.0
        self.consec = 0
        self.verdict: str | None = None
        self.increments: list[float] = []

    def update(self, inc: float) -> None:
        if self.verdict is not None:
            return
        self.increments.append(inc)
        if not math.isfinite(inc) or self.total + inc > self.cap:
            self.verdict = "divergent"
            self.total = min(self.total + inc, math.inf)
            return
        self.total += inc
        if inc <= self.rel_tol * (1.0 + abs(self.total)):
            self.consec += 1
            if self.consec >= self.consec_needed:
                self.verdict = "integrable"
        else:
            self.consec = 0


def _log_weights_simpson(m: int, width: float) -> np.ndarray:
    w = np.full(m, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return np.log(w * (width / (m - 1) / 3.0))


def _segment_log_values(
    spec: DiffusionSpec, ts: np.ndarray, x0: float, g_edge: float, log_h_edge: float
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """log L1 and log |L2| at the sample points ts, walking away from x0.

    g_edge carries int_{x0}^{ts[0]} b; log_h_edge carries
    log int |exp(G/D)| accumulated along the walk so far.
    """
    if spec.drift_potential is not None:
        phi = spec.drift_potential
        g = 2.0 * spec.D * (np.asarray(phi(ts), dtype=float) - float(phi(x0)))
    else:
        b = np.asarray(spec.drift(ts), dtype=float)
        if not np.all(np.isfinite(b)):
            raise DomainError(f"drift evaluation failed inside [{ts.min()}, {ts.max()}]")
        dx = (ts[-1] - ts[0]) / (len(ts) - 1)
        g = g_edge + cumulative_simpson(b, dx=dx, initial=0.0)
    if not np.all(np.isfinite(g)):
        raise DomainError(f"drift potential not finite inside [{ts.min()}, {ts.max()}]")

    log_l1 = -g / spec.D
    # |H(t_j)| = |int_{x0}^{t_j} exp(G/D) dz| grows monotonically along the walk;
    # accumulate its log with trapezoid increments.
    log_f = g / spec.D
    step = abs(float(ts[1] - ts[0]))
    seg = np.logaddexp(log_f[:-1], log_f[1:]) + math.log(step / 2.0)
    log_cum = np.concatenate(([-math.inf], np.logaddexp.accumulate(seg)))
    log_h = np.logaddexp(log_h_edge, log_cum)
    return log_l1, log_l1 + log_h, float(g[-1]), float(log_h[-1])


def _cut_sequence(endpoint: float, x0: float, max_steps: int, first_offset: float | None):
    """Cut positions marching from x0 toward the endpoint, halving (finite
    endpoint) or doubling (infinite) the remaining scale each step."""
    cuts = []
    if math.isfinite(endpoint):
        eps0 = first_offset if first_offset is not None else abs(x0 - endpoint) / 2.0
        side = 1.0 if x0 > endpoint else -1.0
        for k in range(max_steps + 1):
            cuts.append(endpoint + side * eps0 * 2.0 ** (-k))
    else:
        l0 = first_offset if first_offset is not None else abs(x0) + 1.0
        side = 1.0 if endpoint > 0 else -1.0
        for k in range(max_steps + 1):
            cuts.append(side * l0 * 2.0**k)
    return cuts


def classify_boundary(
    spec: DiffusionSpec,
    endpoint: float,
    x0: float,
    *,
    max_steps: int = 48,
    rel_tol: float = 1e-9,
    divergence_cap: float = 1e12,
    samples_per_shell: int = 257,
    first_offset: float | None = None,
) -> BoundaryClass:
    """Classify one endpoint of spec.domain from the base point x0.

    The integrals of |L1| and |L2| are evaluated shell by shell on a geometric
    cutoff sequence.  An integral is declared integrable once three successive
    shell increments fall below rel_tol * (1 + |total|), and divergent once the
    running total passes divergence_cap.  If neither happens within max_steps
    the classification fails with :class:`InconclusiveError` naming the stalled
    integral, rather than guessing.
    """
    if not spec.domain.contains(x0):
        raise DomainError(f"base point {x0} not interior to the domain")
    endpoint = float(endpoint)
    if endpoint not in (spec.domain.r1, spec.domain.r2):
        raise DomainError(f"endpoint {endpoint} is not an endpoint of the domain")

    diag = BoundaryDiagnostics(endpoint=endpoint, x0=x0)
    l1 = _IntegralTracker("L1", rel_tol, divergence_cap)
    l2 = _IntegralTracker("L2", rel_tol, divergence_cap)

    cuts = _cut_sequence(endpoint, x0, max_steps, first_offset)
    diag.cutoffs = cuts
    m = samples_per_shell if samples_per_shell % 2 == 1 else samples_per_shell + 1

    g_edge = 0.0
    log_h_edge = -math.inf
    prev = x0
    steps = 0
    for cut in cuts:
        steps += 1
        ts = np.linspace(prev, cut, m)
        log_l1, log_l2, g_edge, log_h_edge = _segment_log_values(spec, ts, x0, g_edge, log_h_edge)
        log_w = _log_weights_simpson(m, abs(cut - prev))

        top1 = float(np.max(log_l1 + log_w))
        inc1 = math.inf if top1 > _LOG_GUARD else float(np.exp(logsumexp(log_l1 + log_w)))
        l1.update(inc1)

        top2 = float(np.max(log_l2 + log_w))
        inc2 = math.inf if top2 > _LOG_GUARD else float(np.exp(logsumexp(log_l2 + log_w)))
        l2.update(inc2)

        prev = cut
        if l1.verdict == "divergent":
            break
        if l1.verdict and l2.verdict:
            break
        if log_h_edge > _LOG_GUARD:
            # 1/L1 has exploded: every later L2 shell dwarfs the cap
            l2.update(math.inf)
            if l1.verdict:
                break

    diag.l1_increments, diag.l2_increments = l1.increments, l2.increments
    diag.l1_total, diag.l2_total = l1.total, l2.total
    diag.l1_verdict, diag.l2_verdict = l1.verdict, l2.verdict

    if l1.verdict == "divergent":
        return BoundaryClass(BoundaryKind.NATURAL_REPULSIVE, diag)
    if l1.verdict is None:
        raise InconclusiveError("L1", endpoint, steps)
    if l2.verdict is None:
        raise InconclusiveError("L2", endpoint, steps)
    if l2.verdict == "divergent":
        return BoundaryClass(BoundaryKind.NATURAL_ATTRACTIVE, diag)
    return BoundaryClass(BoundaryKind.NOT_NATURAL, diag)


class TransmissionKind(enum.Enum):
    BLOCKED = "Blocked"
    TRANSMITTING = "Transmitting"
    INDETERMINATE = "Indeterminate"


@dataclass
class Transmission:
    kind: TransmissionKind
    alpha_left: float
    alpha_right: float
    stderr_left: float
    stderr_right: float


def _fit_side(x: np.ndarray, rho: np.ndarray, node: float, side: int,
              h: float, min_points: int, max_points: int) -> tuple[float, float]:
    dist = side * (x - node)
    idx = np.nonzero(dist > 2.0 * h)[0]
    idx = idx[np.argsort(dist[idx])][:max_points]
    if len(idx) < min_points:
        raise ValueError(f"only {len(idx)} usable points on one side of the node, need {min_points}")
    vals = rho[idx]
    if np.any(vals <= 0.0):
        raise ValueError("fit window contains non-positive density values")
    t = np.log(dist[idx])
    y = np.log(vals)
    tb, yb = t - t.mean(), y - y.mean()
    stt = float(tb @ tb)
    slope = float(tb @ yb) / stt
    resid = yb - slope * tb
    dof = len(idx) - 2
    se = math.sqrt(max(float(resid @ resid) / dof, 0.0) / stt) if dof > 0 else math.inf
    return slope, se


def transmission_at_node(
    rho: GridField,
    node: float,
    *,
    min_points: int = 8,
    max_points: int = 40,
    node_tol: float = 0.05,
) -> Transmission:
    """Decide whether a density node blocks or transmits the diffusion.

    Fits log rho against log |x - node| on each side (skipping |x - node| < 2h)
    and reads off the local exponent.  An exponent >= 1 on either side (equality
    judged within the fit standard error) blocks; exponents in (0, 1) on both
    sides transmit.
    """
    x = rho.grid.points
    h = rho.grid.h
    if not (rho.grid.lo + 2 * h < node < rho.grid.hi - 2 * h):
        raise DomainError(f"node {node} not interior to the field's grid")
    peak = float(np.max(np.abs(rho.values)))
    nearest = int(np.argmin(np.abs(x - node)))
    if abs(rho.values[nearest]) > node_tol * peak:
        raise DomainError(f"density does not vanish at {node} (value {rho.values[nearest]:.3e})")

    a_l, se_l = _fit_side(x, rho.values, node, -1, h, min_points, max_points)
    a_r, se_r = _fit_side(x, rho.values, node, +1, h, min_points, max_points)

    blocked = (a_l >= 1.0 - se_l) or (a_r >= 1.0 - se_r)
    transmitting = (0.0 < a_l < 1.0) and (0.0 < a_r < 1.0)
    if blocked:
        kind = TransmissionKind.BLOCKED
    elif transmitting:
        kind = TransmissionKind.TRANSMITTING
    else:
        kind = TransmissionKind.INDETERMINATE
    return Transmission(kind, a_l, a_r, se_l, se_r)
