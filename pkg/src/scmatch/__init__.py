"""Boundary parameter matching for NURBS channel domains.

The package takes a four-sided B-Rep (West/East long boundaries, South/North
caps), computes a conformal correspondence between the long sides through a
Schwarz-Christoffel disk map, reparameterizes one side exactly, and builds a
bijective tensor-product surface (Coons, optionally PDE-smoothed) together
with quality reports and a Poisson convergence demo.
"""

from .errors import SchemaError, NumericalError, ConvergenceError, StageError

__version__ = "0.1.0"

__all__ = [
    "SchemaError",
    "NumericalError",
    "ConvergenceError",
    "StageError",
    "__version__",
]
