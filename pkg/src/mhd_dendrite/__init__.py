"""Mixed finite-element solver and verification harness for a coupled
melt-flow / phase-field / solute model with magnetic damping."""

from .constitutive import ModelParameters
from .mesh import Mesh, Rectangle, generate_rect_mesh, mesh_statistics, refine_uniform
from .mms import get_case
from .spaces import FEFunction, FunctionSpace, build_space, interpolate, l2_error
from .timestepper import NewtonConfig, TimeGrid, solve_transient

__all__ = [
    "ModelParameters",
    "Mesh", "Rectangle", "generate_rect_mesh", "mesh_statistics", "refine_uniform",
    "get_case",
    "FEFunction", "FunctionSpace", "build_space", "interpolate", "l2_error",
    "NewtonConfig", "TimeGrid", "solve_transient",
]

__version__ = "0.1.0"
