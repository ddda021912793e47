"""Numerical toolkit for differential equations whose argument is piecewise
constant on a mesh of alternately advanced and delayed intervals.

Builds the solution operator Z(t,s) and the Green kernels of the linear
system, solves linear and quasilinear problems, constructs bounded
solutions under dichotomies, and produces checkable stability and
dichotomy certificates.
"""

from .cauchy_operator import CauchyOperator
from .certificates import (Certificate, check_exponential_dichotomy,
                           check_exponential_stability_discrete, check_h2,
                           check_ordinary_dichotomy, check_s_conditions,
                           check_series, gronwall_bound, lambda1_scalar,
                           lambda_scalar, scalar_example_certificate,
                           sigma0_perturbed)
from .coefficients import (CoefficientFunction, constant, eta_preset,
                           forcing_preset, from_callable, matrix_preset,
                           perturbation_preset, zero)
from .errors import DepcagError
from .green import GreenKernel, spectral_projection
from .linear_flow import FlowEvaluator, check_h4, ematrix, jmatrix
from .mesh import Mesh
from .solvers import (DepcagSystem, Trajectory, bounded_solution_backward,
                      bounded_solution_dichotomy, bounded_solution_forward,
                      equivalence_inverse, equivalence_map, nonlinear_bounded,
                      oracle_integrate, sample_grid, solve_b_only,
                      solve_linear, solve_linear_wiener, solve_quasilinear,
                      trajectory_residual)

__version__ = "0.1.0"
