"""Symbol calculus, contact transformations and invertible Fourier integral operators on R^n."""

from .diffeo import ContactDiffeo, SolverConfig
from .expr import HomogeneousField, ScalarField, parse_expression
from .fio import FioElement, FioTangent
from .symbols import GradedSymbol, SobolevParams

__version__ = "0.1.0"

__all__ = [
    "ContactDiffeo",
    "SolverConfig",
    "HomogeneousField",
    "ScalarField",
    "parse_expression",
    "FioElement",
    "FioTangent",
    "GradedSymbol",
    "SobolevParams",
]
