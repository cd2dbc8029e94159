"""Numerical laboratory for superquadratic nonlocal Hamilton-Jacobi equations."""

from .kernels import BACKEND
from .params import (
    RegularityEstimate,
    StructureError,
    StructureParams,
    c_minus,
    c_plus,
    conjugate_exponent,
    legendre_gap,
    young_margin,
)

__version__ = "0.1.0"
