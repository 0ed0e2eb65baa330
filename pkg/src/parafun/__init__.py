"""Parallel-in-time evaluation of matrix functions.

Matrix functions (inverse, exponential, cosine) are computed as the end
point of matrix ODEs integrated with classical or subspace-projected
parareal. The package also covers accelerated convergence to steady
states and a virtual-control formulation of steady-state capture.
"""

from .errors import (DimensionError, DivergenceError, MatrixMarketError, NotSPDError,
                     NumericalError, ParafunError, SingularMatrixError, StallError,
                     UnsupportedSchemeError)
from .flows import FlowSpec, Propagator, TimeGrid, propagate, propagate_affine, rhs_eval
from .matcore import (GlobalQRResult, diamond_product, frobenius_inner, frobenius_norm,
                      global_qr)
from .matfun import (MatFunReport, MatFunRequest, cos_sin_via_ode, evaluate, exp_via_ode,
                     inverse_via_ode, relative_maxabs_error)
from .mmio import read_matrix, write_matrix
from .parareal import (PararealRun, classical_parareal, modified_parareal_homogeneous,
                       modified_parareal_inhomogeneous)
from .reference import (ProblemSpec, approx_inverse, generate, reference_cos, reference_exp,
                        reference_inverse, reference_sin, scaling_exponent, sequential_fine)

__version__ = "0.1.0"

__all__ = [
    "ParafunError", "DimensionError", "NumericalError", "SingularMatrixError",
    "UnsupportedSchemeError", "NotSPDError", "DivergenceError", "StallError", "MatrixMarketError",
    "FlowSpec", "Propagator", "TimeGrid", "propagate", "propagate_affine", "rhs_eval",
    "GlobalQRResult", "diamond_product", "frobenius_inner", "frobenius_norm", "global_qr",
    "MatFunReport", "MatFunRequest", "cos_sin_via_ode", "evaluate", "exp_via_ode",
    "inverse_via_ode", "relative_maxabs_error",
    "read_matrix", "write_matrix",
    "PararealRun", "classical_parareal", "modified_parareal_homogeneous",
    "modified_parareal_inhomogeneous",
    "ProblemSpec", "approx_inverse", "generate", "reference_cos", "reference_exp",
    "reference_inverse", "reference_sin", "scaling_exponent", "sequential_fine",
]
