"""One-dimensional diffusions with inaccessible boundaries.

Bridge interpolation between endpoint densities, Feller boundary
classification, Feynman-Kac kernels by constrained path-integral Monte Carlo,
weak SDE simulation for singular drifts, hydrodynamic conservation-law checks,
and the harmonic spectral family of dynamically equivalent diffusions.
"""

from .core import (
    FULL_LINE,
    HALF_LINE,
    DiffusionSpec,
    DomainError,
    GridField,
    Interval,
    UniformGrid,
    derivative,
    integrate,
    quadrature_weights,
)
from .feller import (
    BoundaryClass,
    BoundaryKind,
    InconclusiveError,
    Transmission,
    TransmissionKind,
    classify_boundary,
    hille_l1,
    hille_l2,
    transmission_at_node,
)
from .kernels import (
    KernelOracle,
    TransitionDensity,
    backward_density,
    bessel_density,
    check_semigroup,
    heat_kernel,
    make_transition_density,
    mehler_kernel,
)
from .bridge import BridgeProblem, BridgeSolution, bridge_drift, interpolate_density, solve_bridge
from .pathint import (
    McEstimate,
    PathBundle,
    absorbing_limit_study,
    fk_kernel_mc,
    girsanov_weight,
    sample_brownian_bridges,
)
from .sde import PassageReport, SimConfig, SimResult, empirical_density, first_passage_fraction, simulate
from .hydro import (
    HydroFields,
    MaskedField,
    MomentumBalance,
    acceleration_field,
    build_hydro,
    continuity_residual,
    ehrenfest_check,
    momentum_balance,
)
from .spectral import (
    EigenState,
    EquivalenceClassMember,
    StateDrift,
    drift_from_state,
    equivalence_class,
    hermite_state,
    nodal_decomposition,
    omega_from_drift,
    sturm_liouville_solve,
)
from .expr import ExprEvalError, ExprSyntaxError, parse_expression

__version__ = "0.1.0"
