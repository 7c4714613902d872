"""Surface diffusion flow near strictly stable critical sets in flat tori.

Spectral discretization of graphs over a flat torus and of closed plane
curves, a stabilized flow integrator, Jacobi-operator stability analysis and
the energy diagnostics used to observe convergence.
"""

__version__ = "0.1.0"

from .errors import ConfigError, GridMismatchError, GuardViolation
from .lattice import FlatTorus, PeriodicGrid, ScalarField, make_grid, solve_stabilized, spectral_derivative
from .geometry import (
    GraphSurface,
    ParametricCurve,
    build_geometry,
    curve_geometry,
    laplace_beltrami,
)
from .stability import ReferenceSurface, analyze, quadratic_form, translation_basis
from .diagnostics import (
    EnergySeries,
    dirichlet_energy,
    distance_functional,
    hessian_energy,
    lyapunov_energy,
    pi_coercivity_margin,
    translate_fit,
)
from .flow import FlowConfig, FlowState, run_flow, step_curve, step_graph
from .io import parse_config, read_series, read_snapshot, write_series, write_snapshot
