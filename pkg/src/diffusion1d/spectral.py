"""Harmonic-oscillator eigenstates, the drifts and potentials they induce, and
the decomposition of excited states into non-communicating diffusion components.

Everything here works in rescaled variables with D = 1/2; callers with a
different diffusion constant convert at the module boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import bisect, brentq

from .core import DiffusionSpec, DomainError, GridField, Interval, UniformGrid, quadrature_weights
from .feller import BoundaryClass, BoundaryKind, InconclusiveError, classify_boundary

__all__ = [
    "D_CONVENTION",
    "EigenState",
    "StateDrift",
    "EquivalenceClassMember",
    "hermite_state",
    "drift_from_state",
    "omega_from_drift",
    "nodal_decomposition",
    "sturm_liouville_solve",
    "equivalence_class",
]

D_CONVENTION = 0.5
MAX_HERMITE = 12

# exact zeros of the low Hermite polynomials (unit frequency)
_ANALYTIC_NODES = {
    0: (),
    1: (0.0,),
    2: (-1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0)),
    3: (-math.sqrt(1.5), 0.0, math.sqrt(1.5)),
}


def _psi_pair(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(psi_n, psi_{n-1}) for the unit-frequency oscillator, by the normalized
    three-term recurrence (stable for the n <= 12 range supported here)."""
    x = np.asarray(x, dtype=float)
    p_prev = np.zeros_like(x)
    p_cur = math.pi ** -0.25 * np.exp(-0.5 * x * x)
    for k in range(1, n + 1):
        p_prev, p_cur = p_cur, math.sqrt(2.0 / k) * x * p_cur - math.sqrt((k - 1) / k) * p_prev
    return p_cur, p_prev


@dataclass
class EigenState:
    """Normalized eigenstate with eigenvalue epsilon = (n + 1/2) omega and its nodes.

    psi and its first three derivatives are evaluable callables; support is
    None for whole-line analytic states, or the truncation interval for
    numerically solved ones.
    """

    n: int
    omega_freq: float
    D: float
    epsilon: float
    nodes: np.ndarray
    psi: Callable
    psi_d1: Callable
    psi_d2: Callable
    psi_d3: Callable
    support: Interval | None = None


def _hermite_nodes(n: int) -> np.ndarray:
    if n in _ANALYTIC_NODES:
        return np.array(_ANALYTIC_NODES[n], dtype=float)
    span = math.sqrt(2.0 * n + 1.0)
    xs = np.linspace(-span, span, 400 * n)
    vals, _ = _psi_pair(n, xs)
    roots = []
    for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
        roots.append(bisect(lambda u: float(_psi_pair(n, np.array([u]))[0][0]), xs[i], xs[i + 1], xtol=1e-13))
    return np.array(roots)


def hermite_state(n: int, omega: float = 1.0) -> EigenState:
    """The n-th oscillator eigenstate in rescaled variables (D = 1/2).

    For frequency omega the state is omega^(1/4) psi_n(sqrt(omega) x),
    normalized in x, with eigenvalue (n + 1/2) omega and nodes scaled by
    1/sqrt(omega).
    """
    if not 0 <= n <= MAX_HERMITE:
        raise ValueError(f"n must be in [0, {MAX_HERMITE}] (recurrence-stable range), got {n}")
    if not omega > 0:
        raise ValueError("omega must be positive")
    s = math.sqrt(omega)
    amp = omega**0.25
    two_np1 = 2.0 * n + 1.0

    def psi(x):
        return amp * _psi_pair(n, s * np.asarray(x, dtype=float))[0]

    def psi_d1(x):
        u = s * np.asarray(x, dtype=float)
        pn, pm = _psi_pair(n, u)
        return amp * s * (math.sqrt(2.0 * n) * pm - u * pn)

    def psi_d2(x):
        u = s * np.asarray(x, dtype=float)
        pn, _ = _psi_pair(n, u)
        return amp * s * s * (u * u - two_np1) * pn

    def psi_d3(x):
        u = s * np.asarray(x, dtype=float)
        pn, pm = _psi_pair(n, u)
        d1 = math.sqrt(2.0 * n) * pm - u * pn
        return amp * s**3 * (2.0 * u * pn + (u * u - two_np1) * d1)

    return EigenState(
        n=n,
        omega_freq=omega,
        D=D_CONVENTION,
        epsilon=(n + 0.5) * omega,
        nodes=_hermite_nodes(n) / s,
        psi=psi,
        psi_d1=psi_d1,
        psi_d2=psi_d2,
        psi_d3=psi_d3,
    )


class StateDrift:
    """Drift induced by an eigenstate: b = psi' / psi (D = 1/2 convention).

    Evaluation within node_guard of a node raises DomainError; the log
    potential ln|psi| (with b = potential') stays unguarded since it is finite
    off the nodes themselves.
    """

    def __init__(self, state: EigenState, node_guard: float = 1e-9):
        self._state = state
        self.nodes = np.asarray(state.nodes, dtype=float)
        self.node_guard = node_guard

    def _checked(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.nodes.size:
            d = np.min(np.abs(x[..., None] - self.nodes[None, :]), axis=-1)
            if np.any(d < self.node_guard):
                raise DomainError("drift evaluated within 1e-9 of a node")
        return x

    def __call__(self, x):
        x = self._checked(x)
        st = self._state
        return st.psi_d1(x) / st.psi(x)

    def d1(self, x):
        x = self._checked(x)
        st = self._state
        b = st.psi_d1(x) / st.psi(x)
        return st.psi_d2(x) / st.psi(x) - b * b

    def d2(self, x):
        x = self._checked(x)
        st = self._state
        p = st.psi(x)
        b = st.psi_d1(x) / p
        r2 = st.psi_d2(x) / p
        return st.psi_d3(x) / p - 3.0 * b * r2 + 2.0 * b**3

    def potential(self, x):
        return np.log(np.abs(self._state.psi(np.asarray(x, dtype=float))))


def drift_from_state(state: EigenState) -> StateDrift:
    """b(x) = psi'(x)/psi(x); general-D callers multiply by 2D."""
    return StateDrift(state)


def omega_from_drift(b: Callable, D: float, d1: Callable | None = None, fd_step: float = 1e-6) -> Callable:
    """Potential Omega(x) = b(x)^2 / 2 + D b'(x).

    b' is the explicit d1 argument or an analytic ``d1`` attribute of the
    drift when available, otherwise a central difference of width fd_step.
    """
    if d1 is None:
        d1 = getattr(b, "d1", None)
    if d1 is None:

        def d1(x):
            x = np.asarray(x, dtype=float)
            return (np.asarray(b(x + fd_step)) - np.asarray(b(x - fd_step))) / (2.0 * fd_step)

    def om(x):
        bx = np.asarray(b(x), dtype=float)
        return 0.5 * bx * bx + D * np.asarray(d1(x), dtype=float)

    return om


@dataclass
class EquivalenceClassMember:
    """One nodal component: a diffusion confined between natural boundaries."""

    interval: Interval
    n: int
    drift: StateDrift
    omega_potential: Callable
    density: Callable  # psi^2 renormalized on the interval
    weight: float  # mass fraction of the component
    boundaries: tuple[BoundaryClass, BoundaryClass] | None

    def to_diffusion_spec(self) -> DiffusionSpec:
        return DiffusionSpec(
            D=D_CONVENTION,
            drift=self.drift,
            domain=self.interval,
            drift_potential=self.drift.potential,
            drift_d1=self.drift.d1,
            drift_d2=self.drift.d2,
        )


def _component_x0(interval: Interval) -> float:
    a, b = interval.r1, interval.r2
    if math.isfinite(a) and math.isfinite(b):
        return 0.5 * (a + b)
    if math.isfinite(a):
        return a + 1.0
    if math.isfinite(b):
        return b - 1.0
    return 0.0


def nodal_decomposition(state: EigenState, *, classify: bool = True) -> list[EquivalenceClassMember]:
    """Cut the state's density at its nodes into n+1 independent components.

    Each component's density is renormalized on its interval and each finite
    endpoint is checked to carry a diverging drift; when classify is set the
    endpoints are verified natural, and an inconclusive classification fails
    loudly naming the component.
    """
    cuts = [-math.inf, *map(float, state.nodes), math.inf]
    if state.support is not None:
        cuts[0], cuts[-1] = state.support.r1, state.support.r2
    members: list[EquivalenceClassMember] = []
    drift = drift_from_state(state)
    omega_pot = omega_from_drift(drift, state.D)
    for i in range(len(cuts) - 1):
        interval = Interval(cuts[i], cuts[i + 1])
        a = interval.r1 if math.isfinite(interval.r1) else -np.inf
        b = interval.r2 if math.isfinite(interval.r2) else np.inf
        mass, _ = quad(lambda u: float(state.psi(u)) ** 2, a, b, limit=200)
        if mass <= 0:
            raise RuntimeError(f"component {i} of state n={state.n} carries no mass")

        def density(x, _m=mass):
            return np.asarray(state.psi(x), dtype=float) ** 2 / _m

        for r in interval.finite_endpoints:
            probe = r + 1e-7 if r == interval.r1 else r - 1e-7
            bval = abs(float(drift(probe)))
            if bval <= 1e6:
                raise RuntimeError(
                    f"drift does not diverge at endpoint {r} of component {i} (|b| = {bval:.3e})"
                )

        boundaries = None
        if classify:
            spec = DiffusionSpec(
                D=state.D,
                drift=drift,
                domain=interval,
                drift_potential=drift.potential,
            )
            x0 = _component_x0(interval)
            cls = []
            for endpoint in (interval.r1, interval.r2):
                try:
                    c = classify_boundary(spec, endpoint, x0)
                except InconclusiveError as exc:
                    raise InconclusiveError(
                        f"{exc.integral} (component {i} of state n={state.n})", endpoint, 0
                    ) from exc
                if c.kind is BoundaryKind.NOT_NATURAL:
                    raise RuntimeError(
                        f"endpoint {endpoint} of component {i} (state n={state.n}) "
                        "classified NotNatural"
                    )
                cls.append(c)
            boundaries = (cls[0], cls[1])

        members.append(
            EquivalenceClassMember(
                interval=interval,
                n=state.n,
                drift=drift,
                omega_potential=omega_pot,
                density=density,
                weight=mass,
                boundaries=boundaries,
            )
        )
    return members


def _solve_tridiagonal(x: np.ndarray, w_pot: np.ndarray, D: float, n_max: int):
    h = x[1] - x[0]
    diag = 2.0 * D / h**2 + w_pot[1:-1]
    off = np.full(len(diag) - 1, -D / h**2)
    vals, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(0, n_max))
    return vals, vecs


def _sign_changes(psi: np.ndarray, rel_floor: float = 1e-8) -> list[tuple[int, int]]:
    """Index pairs bracketing each sign change, skipping sub-floor wiggles."""
    big = np.abs(psi) > rel_floor * np.max(np.abs(psi))
    idx = np.nonzero(big)[0]
    sgn = np.sign(psi[idx])
    out = []
    for k in range(len(idx) - 1):
        if sgn[k] * sgn[k + 1] < 0:
            out.append((idx[k], idx[k + 1]))
    return out


def sturm_liouville_solve(
    omega_potential: GridField,
    D: float,
    n_max: int,
    *,
    refine_check: bool = True,
    refine_tol: float = 1e-3,
) -> list[EigenState]:
    """Lowest n_max + 1 eigenpairs of H = -D Lap + Omega/(2D) on the truncated grid.

    Symmetric tridiagonal central-difference discretization with Dirichlet
    edges; eigenvalues by bisection with inverse-iteration eigenvectors.
    Eigenfunctions come back grid-normalized with a positive leading lobe, as
    cubic-spline callables clamped to zero outside the truncation.

    Raises when the potential fails to confine the requested states at the
    truncation edges, or (with refine_check) when halving h moves any
    eigenvalue by more than refine_tol.
    """
    grid = omega_potential.grid
    x = grid.points
    w_pot = omega_potential.values / (2.0 * D)
    vals, vecs = _solve_tridiagonal(x, w_pot, D, n_max)
    if min(w_pot[0], w_pot[-1]) <= vals[-1]:
        raise ValueError(
            f"potential not confining: edge value {min(w_pot[0], w_pot[-1]):.4g} "
            f"does not exceed eigenvalue {vals[-1]:.4g}"
        )
    if refine_check:
        fine = UniformGrid(grid.lo, grid.hi, 2 * grid.n - 1)
        w_fine = CubicSpline(x, w_pot)(fine.points)
        vals_fine, _ = _solve_tridiagonal(fine.points, w_fine, D, n_max)
        shift = float(np.max(np.abs(vals - vals_fine)))
        if shift > refine_tol:
            raise ValueError(f"grid too coarse: eigenvalues move by {shift:.3e} under h -> h/2")

    weights = quadrature_weights(grid)
    states = []
    support = Interval(grid.lo, grid.hi)
    for k in range(n_max + 1):
        psi = np.zeros(grid.n)
        psi[1:-1] = vecs[:, k]
        psi /= math.sqrt(float(np.sum(weights * psi * psi)))
        lobe = np.nonzero(np.abs(psi) > 0.1 * np.max(np.abs(psi)))[0][0]
        if psi[lobe] < 0:
            psi = -psi
        changes = _sign_changes(psi)
        if len(changes) != k:
            raise ValueError(
                f"eigenfunction {k} shows {len(changes)} sign changes, expected {k}; "
                "refine the grid or widen the truncation"
            )
        spline = CubicSpline(x, psi)
        nodes = np.array([brentq(spline, x[l], x[r], xtol=1e-13) for l, r in changes])

        def clamped(f, _lo=grid.lo, _hi=grid.hi):
            def g(u):
                u = np.asarray(u, dtype=float)
                inside = (u >= _lo) & (u <= _hi)
                out = np.zeros_like(u)
                out[inside] = f(u[inside])
                return out

            return g

        states.append(
            EigenState(
                n=k,
                omega_freq=math.nan,
                D=D,
                epsilon=float(vals[k]),
                nodes=nodes,
                psi=clamped(spline),
                psi_d1=clamped(spline.derivative(1)),
                psi_d2=clamped(spline.derivative(2)),
                psi_d3=clamped(spline.derivative(3)),
                support=support,
            )
        )
    return states


def _quadratic_fit(x: np.ndarray, y: np.ndarray):
    c2, c1, c0 = np.polyfit(x, y, 2)
    resid = float(np.max(np.abs(np.polyval([c2, c1, c0], x) - y)))
    return c2, c1, c0, resid


def equivalence_class(
    reference: DiffusionSpec,
    n_max: int,
    *,
    grid: UniformGrid | None = None,
    accel_tol: float = 1e-6,
) -> list[EquivalenceClassMember]:
    """All diffusions sharing the reference's local acceleration field.

    The reference potential Omega is reconstructed from the drift, the
    associated eigenvalue problem is solved on the grid, and every state up to
    n_max is cut at its nodes; the union of components is returned.  When the
    reconstructed Omega is quadratic the analytic oscillator states replace
    the numerical ones (same policy as analytic nodes overriding numerical
    ones), which keeps drifts and accelerations exact.

    Every member's acceleration field is asserted equal to the reference's
    within accel_tol outside node masks.
    """
    if reference.drift_potential is None:
        raise ValueError("reference drift must be a gradient field (potential required)")
    if abs(reference.D - D_CONVENTION) > 1e-15:
        raise ValueError("this module works in rescaled variables with D = 1/2")
    if grid is None:
        grid = UniformGrid(-8.0, 8.0, 1601)
    x = grid.points

    omega_fn = omega_from_drift(reference.drift, reference.D, d1=reference.drift_d1)
    om_vals = np.asarray(omega_fn(x), dtype=float)
    states_num = sturm_liouville_solve(GridField(grid, om_vals), reference.D, n_max)

    c2, c1, c0, resid = _quadratic_fit(x, om_vals)
    harmonic = resid < 1e-8 and abs(c1) < 1e-8 and c2 > 0
    if harmonic:
        freq = math.sqrt(2.0 * c2)
        for k, st in enumerate(states_num):
            expected = (k + 0.5) * freq + c0 / (2.0 * reference.D)
            if abs(st.epsilon - expected) > 5e-3:
                raise RuntimeError(
                    f"numerical eigenvalue {st.epsilon:.6f} disagrees with the "
                    f"harmonic prediction {expected:.6f} for state {k}"
                )
        states = [hermite_state(k, freq) for k in range(n_max + 1)]
    else:
        states = states_num

    members = []
    for st in states:
        members.extend(nodal_decomposition(st, classify=True))

    # reference acceleration on the grid
    if reference.drift_d1 is not None and reference.drift_d2 is not None:
        ref_acc = np.asarray(reference.drift(x)) * np.asarray(reference.drift_d1(x)) + (
            reference.D * np.asarray(reference.drift_d2(x))
        )
    else:
        h = 1e-5
        bx = np.asarray(reference.drift(x), dtype=float)
        bp = (np.asarray(reference.drift(x + h)) - np.asarray(reference.drift(x - h))) / (2 * h)
        bpp = (np.asarray(reference.drift(x + h)) - 2 * bx + np.asarray(reference.drift(x - h))) / h**2
        ref_acc = bx * bp + reference.D * bpp

    for m in members:
        inside = np.asarray(m.interval.contains(x), dtype=bool)
        for z in m.drift.nodes:
            inside &= np.abs(x - z) > 3.0 * grid.h
        if not np.any(inside):
            continue
        xs = x[inside]
        acc = np.asarray(m.drift(xs)) * np.asarray(m.drift.d1(xs)) + D_CONVENTION * np.asarray(
            m.drift.d2(xs)
        )
        err = float(np.max(np.abs(acc - ref_acc[inside])))
        if err > accel_tol:
            raise RuntimeError(
                f"member on ({m.interval.r1}, {m.interval.r2}) from state n={m.n} has "
                f"acceleration mismatch {err:.3e} > {accel_tol:g}"
            )
    return members
