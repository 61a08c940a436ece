"""Guaranteed upper and lower error bounds for elliptic problems on exterior domains."""
from .approx import Algorithm1, TruncatedApproximation, alg1_run, energy
from .conforming import BoundReport, MajorantConfig, compute_bounds, exact_error_ball
from .errors import BoundsError
from .fem import FeSpace
from .mesh import BoundaryTag, TetMesh, generate, read_mesh, validate, write_mesh
from .nonconforming import FluxApproximation, NcBoundReport, fabricate_flux, nc_bounds
from .problem import ProblemSpec

__version__ = "0.1.0"

__all__ = [
    "Algorithm1", "TruncatedApproximation", "alg1_run", "energy",
    "BoundReport", "MajorantConfig", "compute_bounds", "exact_error_ball",
    "BoundsError", "FeSpace",
    "BoundaryTag", "TetMesh", "generate", "read_mesh", "validate", "write_mesh",
    "FluxApproximation", "NcBoundReport", "fabricate_flux", "nc_bounds",
    "ProblemSpec",
]
