"""Multiple scattering by clusters of small dielectric rods in 2D.

Rods interact through a Foldy-Lax system; clusters of rods are coupled
through discrete single-layer (monopole) representations fitted on curves
that enclose them.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConvergenceError,
    DivergenceError,
    DomainError,
    GeometryError,
    ScatteringError,
    SingularSystemError,
)
from .fast_monopole import (
    CoupledSolution,
    CouplingConfig,
    FitConfig,
    MultiClusterScenario,
    global_scattered_field,
    local_incident_values,
    local_solve,
    operation_count_report,
    solve_coupled,
)
from .foldy_lax import (
    ClusterSolution,
    IncidentField,
    SolverConfig,
    assemble_interaction,
    scattered_field_direct,
    solve_direct,
    t_coeff,
    total_field,
)
from .geometry import (
    BoundaryCurve,
    Cluster,
    Location,
    Scatterer,
    contains,
    fill_with_rods,
    homothety,
    make_circle,
    make_trefoil,
)
from .monopole_layer import (
    FitReport,
    MonopoleLayer,
    boundary_values,
    evaluate_layer,
    far_field_amplitude,
    fit_density,
    select_monopole_count,
    select_monopole_points,
)
from .special_fns import bessel_j, bessel_y, dft, green2d, hankel1, idft, wavenumber

__all__ = [
    "__version__",
    "ConfigError",
    "ConvergenceError",
    "DivergenceError",
    "DomainError",
    "GeometryError",
    "ScatteringError",
    "SingularSystemError",
    "CoupledSolution",
    "CouplingConfig",
    "FitConfig",
    "MultiClusterScenario",
    "global_scattered_field",
    "local_incident_values",
    "local_solve",
    "operation_count_report",
    "solve_coupled",
    "ClusterSolution",
    "IncidentField",
    "SolverConfig",
    "assemble_interaction",
    "scattered_field_direct",
    "solve_direct",
    "t_coeff",
    "total_field",
    "BoundaryCurve",
    "Cluster",
    "Location",
    "Scatterer",
    "contains",
    "fill_with_rods",
    "homothety",
    "make_circle",
    "make_trefoil",
    "FitReport",
    "MonopoleLayer",
    "boundary_values",
    "evaluate_layer",
    "far_field_amplitude",
    "fit_density",
    "select_monopole_count",
    "select_monopole_points",
    "bessel_j",
    "bessel_y",
    "dft",
    "green2d",
    "hankel1",
    "idft",
    "wavenumber",
]
