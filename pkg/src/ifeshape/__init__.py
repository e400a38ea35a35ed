"""Fixed-mesh immersed finite elements and shape optimization of material interfaces."""
__version__ = "0.1.0"

from .errors import (ContractViolation, CurveOutsideDomainError, DegenerateGeometryError,
                     GeometryError, IfeError, InvalidArgument, MeshTooCoarseError,
                     SelfIntersectionError, SolverError, StaleStateError, TangencyError,
                     UnisolvencyError)
from .mesh import Mesh, build_cartesian_mesh, classify, refine_uniform
from .geometry import SplineCurve, build_spline, circle_points, ellipse_points
from .assembly import BoundaryCondition, Discretization, ForwardProblemSpec, Materials, assemble
from .solver import factor, solve, solve_adjoint
from .objectives import HeatDissipation, KohnVogelius, OutputLeastSquares
from .problem import ShapeProblem
