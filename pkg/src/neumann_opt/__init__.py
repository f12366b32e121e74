"""Neumann optimizer: matrix-free large-batch second-order optimization on desk-scale problems."""
from .baselines import LrSchedule, lr_at
from .lanczos import extremal_eigs, lanczos, ritz_values
from .linalg import LinearOperator, RngStream, dense_sym_eigs, richardson_solve
from .models import MiniBatch, make_logistic_problem, make_mlp_problem, make_quadratic_problem
from .neumann import (IdealizedParams, NeumannHyperParams, NeumannOptimizer, idealized_neumann_run,
                      neumann_finalize, neumann_step, regularized_gradient)

__version__ = "0.1.0"
