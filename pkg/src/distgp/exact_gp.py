"""Exact zero-mean GP regression with a Gaussian likelihood."""

from __future__ import annotations

import logging

import numpy as np

from .containers import GaussianPrediction, clamp_variance
from .errors import DimensionMismatch
from .kernels import Hyperparameters, kernel_diag, kernel_matrix, kernel_matrix_grad, param_names
from .numerics import SpdFactor, cholesky_jittered, record_allocation, solve_lower, solve_spd

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
# Predictions with more negative variances than this fraction are rejected.
MAX_CLAMP_FRACTION = 0.1


class ExactGpModel:
    """Exact GP conditioned on ``(X, y)`` under fixed hyperparameters.

    The factor of ``K + noise * I`` and ``alpha = (K + noise * I)^{-1} y`` are
    computed once at construction. The model is immutable afterwards; to
    change hyperparameters build a new one with :meth:`with_hyperparameters`.

    Parameters
    ----------
    hyperparameters : Hyperparameters
    X : array, shape (n, d)
    y : array, shape (n,)
    """

    def __init__(self, hyperparameters: Hyperparameters, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if X.shape[1] != hyperparameters.dim:
            raise DimensionMismatch(
                f"X has {X.shape[1]} columns but the kernel expects {hyperparameters.dim}"
            )
        self.hyperparameters = hyperparameters
        self.train_X = X
        self.train_y = y
        self.train_X.setflags(write=False)
        self.train_y.setflags(write=False)

        n = X.shape[0]
        K = kernel_matrix(hyperparameters.kernel, X)
        K[np.diag_indices(n)] += hyperparameters.noise_variance
        record_allocation("exact.K_ff", K.shape)
        self.cached_factor: SpdFactor = cholesky_jittered(K)
        self.cached_alpha: np.ndarray = solve_spd(self.cached_factor, y)

    @property
    def n(self) -> int:
        return self.train_X.shape[0]

    @property
    def kernel(self):
        return self.hyperparameters.kernel

    def with_hyperparameters(self, hyperparameters: Hyperparameters) -> "ExactGpModel":
        return ExactGpModel(hyperparameters, self.train_X, self.train_y)

    def cross_kernel(self, Xs) -> np.ndarray:
        """``K_{*f}``, shape (n_t, n)."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        if Xs.shape[1] != self.hyperparameters.dim:
            raise DimensionMismatch(
                f"test inputs have {Xs.shape[1]} columns, expected {self.hyperparameters.dim}"
            )
        Ksf = kernel_matrix(self.kernel, Xs, self.train_X)
        record_allocation("exact.K_sf", Ksf.shape)
        return Ksf

    def explained_variance(self, Xs, Ksf=None) -> np.ndarray:
        """``diag(K_{*f} Ktilde^{-1} K_{f*})`` per test point."""
        if Ksf is None:
            Ksf = self.cross_kernel(Xs)
        V = solve_lower(self.cached_factor, Ksf.T)
        return np.einsum("ij,ij->j", V, V)

    def posterior(self, Xs, full_cov: bool = False) -> GaussianPrediction:
        """Posterior mean ``K_{*f} alpha`` and variance ``k - K_{*f} Ktilde^{-1} K_{f*}``."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        if Xs.shape[0] == 0:
            return GaussianPrediction(np.zeros(0), np.zeros(0),
                                      np.zeros((0, 0)) if full_cov else None)
        Ksf = self.cross_kernel(Xs)
        mean = Ksf @ self.cached_alpha
        V = solve_lower(self.cached_factor, Ksf.T)
        cov = None
        if full_cov:
            cov = kernel_matrix(self.kernel, Xs) - V.T @ V
            raw_var = np.diag(cov).copy()
        else:
            raw_var = kernel_diag(self.kernel, Xs) - np.einsum("ij,ij->j", V, V)
        var, count = clamp_variance(raw_var, "exact_gp.posterior", MAX_CLAMP_FRACTION)
        return GaussianPrediction(mean, var, cov, n_clamped=count)

    def log_marginal_likelihood(self) -> float:
        y = self.train_y
        return -0.5 * (float(y @ self.cached_alpha) + self.cached_factor.logdet() + self.n * LOG_2PI)

    def _inverse(self) -> np.ndarray:
        return solve_spd(self.cached_factor, np.eye(self.n))

    def lml_gradient(self, param: str) -> float:
        """Derivative of the log marginal likelihood w.r.t. one raw parameter."""
        return self.lml_gradients([param])[0]

    def lml_gradients(self, params=None) -> np.ndarray:
        """Gradient for several parameters, reusing one inverse.

        ``0.5 * alpha^T dK alpha - 0.5 * tr(Ktilde^{-1} dK)`` for each ``dK``.
        """
        if params is None:
            params = param_names(self.hyperparameters.dim)
        Kinv = self._inverse()
        a = self.cached_alpha
        out = np.empty(len(params))
        for k, name in enumerate(params):
            dK = kernel_matrix_grad(self.kernel, self.train_X, None, name)
            out[k] = 0.5 * float(a @ dK @ a) - 0.5 * float(np.sum(Kinv * dK))
        return out


def log_marginal_likelihood(hyperparameters: Hyperparameters, X, y) -> float:
    return ExactGpModel(hyperparameters, X, y).log_marginal_likelihood()
