"""Markov jump processes approximating divergence-form diffusions.

Modules
-------
grid        lattice boxes, grid functions, difference quotients, hat embedding
coeff       coefficient fields, definiteness checks, neighbourhood parameters
generator   positive-type generator assembly and consistency diagnostics
semigroup   uniformization and level-to-level convergence gaps
mjp         exact path simulation and Monte Carlo exit-time moments
exittime    exit-time moments from sparse Dirichlet solves
experiment  configuration and the end-to-end comparison
"""

from .coeff import CoefficientField, parameterize, validate_hat_definite
from .errors import DivJumpError, NumericalError, ValidationError
from .exittime import mean_exit_dual, restrict_to_domain, solve_exit_moments
from .experiment import ExperimentConfig, run_compare, run_validate
from .generator import SparseGenerator, assemble
from .grid import BoxDomain, GridFunction, GridSpec, prolong, restrict
from .mjp import estimate_moments, simulate_exit
from .semigroup import EvolveParams, evolve

__version__ = "0.1.0"

__all__ = [
    "BoxDomain",
    "CoefficientField",
    "DivJumpError",
    "EvolveParams",
    "ExperimentConfig",
    "GridFunction",
    "GridSpec",
    "NumericalError",
    "SparseGenerator",
    "ValidationError",
    "assemble",
    "estimate_moments",
    "evolve",
    "mean_exit_dual",
    "parameterize",
    "prolong",
    "restrict",
    "restrict_to_domain",
    "run_compare",
    "run_validate",
    "simulate_exit",
    "solve_exit_moments",
    "validate_hat_definite",
]
