"""Implicit quasi-static material point solver for saturated porous media.

Displacement lives on a fine background grid, pressure on a coarse one at
twice the spacing (inf-sup stable by construction); a face ghost penalty on
both grids controls the conditioning of poorly covered boundary elements.
"""

from .basis import BasisKind, ShapeSample, eval_basis, gimp_1d, smpm_1d
from .errors import (
    ConfigError,
    LinearSolveFailure,
    NonConvergence,
    NonInvertibleF,
    OutOfGrid,
    ParseError,
    PorompError,
    PorosityViolation,
    SingularMatrix,
    ValidationError,
)
from .ghost import GhostParams
from .material import MaterialParams, MaterialPoints
from .mesh import ActiveSets, CartesianGrid, coarse_of, compute_active_sets, locate_element
from .solver import (
    Scenario,
    SimulationResult,
    SolverConfig,
    TimeSchedule,
    newton_solve,
    run_simulation,
)

__version__ = "0.1.0"

__all__ = [
    "ActiveSets",
    "BasisKind",
    "CartesianGrid",
    "ConfigError",
    "GhostParams",
    "LinearSolveFailure",
    "MaterialParams",
    "MaterialPoints",
    "NonConvergence",
    "NonInvertibleF",
    "OutOfGrid",
    "ParseError",
    "PorompError",
    "PorosityViolation",
    "Scenario",
    "ShapeSample",
    "SimulationResult",
    "SingularMatrix",
    "SolverConfig",
    "TimeSchedule",
    "ValidationError",
    "coarse_of",
    "compute_active_sets",
    "eval_basis",
    "gimp_1d",
    "locate_element",
    "newton_solve",
    "run_simulation",
    "smpm_1d",
    "__version__",
]
