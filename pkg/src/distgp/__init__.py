"""Distributed Gaussian-process regression.

Exact and sparse variational GPs, sparse-grid inducing points with the
(optimized) combination technique, expert partitioning with distributed
hyperparameter training, and aggregation of expert predictions including
optimal weights computed from a Gram system.
"""

from .aggregation import (AGGREGATORS, ExpertEnsemble, WeightSolution, aggregate,
                          aggregate_grbcm, aggregate_npae, aggregate_opt, aggregate_opt_exact,
                          aggregate_opt_svgp, aggregate_poe_family, build_ensemble,
                          optimal_weights, optimal_weights_exact, optimal_weights_svgp)
from .containers import Dataset, GaussianPrediction
from .errors import DistGPError
from .exact_gp import ExactGpModel, log_marginal_likelihood
from .experts import Partition, TrainConfig, fact_objective, partition, select_central, train
from .kernels import Hyperparameters, KernelSpec, kernel_diag, kernel_matrix, kernel_matrix_grad
from .numerics import cholesky_jittered, solve_symmetric_with_fallback
from .sparse_grid import (ct_coefficient, ct_posterior, enumerate_indices, grid_points,
                          opticom_coefficients, opticom_posterior)
from .svgp import SvgpModel

__version__ = "0.1.0"
