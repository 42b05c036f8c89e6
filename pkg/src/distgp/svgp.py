"""Sparse variational GP with the collapsed (optimal) variational distribution.

With inducing inputs ``Z`` and ``M = K_uu + K_uf K_fu / noise``:

* optimal ``q(u)``: mean ``K_uu M^{-1} K_uf y / noise``, covariance ``K_uu M^{-1} K_uu``
* predictive mean ``K_*u M^{-1} K_uf y / noise``
* predictive variance ``k - K_*u (K_uu^{-1} - M^{-1}) K_u*``

The ELBO is evaluated with m x m factorizations only; the n x n prior
covariance is never formed, only its diagonal.
"""

from __future__ import annotations

import numpy as np

from .containers import GaussianPrediction, clamp_variance
from .errors import DimensionMismatch, UnsupportedParam
from .exact_gp import LOG_2PI
from .kernels import Hyperparameters, kernel_diag, kernel_matrix, param_names
from .numerics import SpdFactor, cholesky_jittered, record_allocation, solve_lower, solve_spd


class SvgpModel:
    """Collapsed SVGP conditioned on ``(X, y)``; requires inducing inputs."""

    def __init__(self, hyperparameters: Hyperparameters, X, y, Kuu_factor: SpdFactor | None = None):
        if hyperparameters.inducing_inputs is None:
            raise ValueError("SvgpModel needs hyperparameters with inducing_inputs set")
        Z = hyperparameters.inducing_inputs
        X = np.asarray(X, dtype=float).reshape(-1, hyperparameters.dim) if np.size(X) == 0 \
            else np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if X.shape[1] != hyperparameters.dim:
            raise DimensionMismatch(
                f"X has {X.shape[1]} columns but the kernel expects {hyperparameters.dim}"
            )
        if Z.shape[0] < 1:
            raise ValueError("need at least one inducing input")
        self.hyperparameters = hyperparameters
        self.train_X = X
        self.train_y = y
        noise = hyperparameters.noise_variance
        kern = hyperparameters.kernel

        self.Kuu = kernel_matrix(kern, Z)
        record_allocation("svgp.K_uu", self.Kuu.shape)
        self.Kuf = kernel_matrix(kern, Z, X)
        record_allocation("svgp.K_uf", self.Kuf.shape)
        Muu = self.Kuu + (self.Kuf @ self.Kuf.T) / noise
        Muu = 0.5 * (Muu + Muu.T)
        record_allocation("svgp.M_uu", Muu.shape)
        self.Muu = Muu
        self.cached_factor: SpdFactor = cholesky_jittered(Muu)
        self.Kuu_factor: SpdFactor = Kuu_factor if Kuu_factor is not None else cholesky_jittered(self.Kuu)
        self.Kuf_y = self.Kuf @ y
        self.alpha = solve_spd(self.cached_factor, self.Kuf_y)

    @property
    def Z(self) -> np.ndarray:
        return self.hyperparameters.inducing_inputs

    @property
    def m(self) -> int:
        return self.Z.shape[0]

    @property
    def n(self) -> int:
        return self.train_X.shape[0]

    @property
    def noise_variance(self) -> float:
        return self.hyperparameters.noise_variance

    def with_hyperparameters(self, hyperparameters: Hyperparameters) -> "SvgpModel":
        return SvgpModel(hyperparameters, self.train_X, self.train_y)

    def optimal_variational(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the optimal ``q(u)``."""
        mean = self.Kuu @ self.alpha / self.noise_variance
        S = self.Kuu @ solve_spd(self.cached_factor, self.Kuu)
        return mean, 0.5 * (S + S.T)

    def cross_kernel(self, Xs) -> np.ndarray:
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        if Xs.shape[1] != self.hyperparameters.dim:
            raise DimensionMismatch(
                f"test inputs have {Xs.shape[1]} columns, expected {self.hyperparameters.dim}"
            )
        Ksu = kernel_matrix(self.hyperparameters.kernel, Xs, self.Z)
        record_allocation("svgp.K_su", Ksu.shape)
        return Ksu

    def predict_mean(self, Xs, Ksu=None) -> np.ndarray:
        if Ksu is None:
            Ksu = self.cross_kernel(Xs)
        return Ksu @ self.alpha / self.noise_variance

    def explained_variance(self, Xs, Ksu=None) -> np.ndarray:
        """``diag(K_*u M^{-1} K_u*)``."""
        if Ksu is None:
            Ksu = self.cross_kernel(Xs)
        R = solve_lower(self.cached_factor, Ksu.T)
        return np.einsum("ij,ij->j", R, R)

    def nystrom_variance(self, Xs, Ksu=None) -> np.ndarray:
        """``diag(K_*u K_uu^{-1} K_u*)``."""
        if Ksu is None:
            Ksu = self.cross_kernel(Xs)
        P = solve_lower(self.Kuu_factor, Ksu.T)
        return np.einsum("ij,ij->j", P, P)

    def predict_raw(self, Xs, full_cov: bool = False):
        """Mean, unclamped variance and optional covariance."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        if Xs.shape[0] == 0:
            return np.zeros(0), np.zeros(0), (np.zeros((0, 0)) if full_cov else None)
        Ksu = self.cross_kernel(Xs)
        mean = self.predict_mean(Xs, Ksu)
        R = solve_lower(self.cached_factor, Ksu.T)
        P = solve_lower(self.Kuu_factor, Ksu.T)
        if full_cov:
            cov = kernel_matrix(self.hyperparameters.kernel, Xs) - P.T @ P + R.T @ R
            return mean, np.diag(cov).copy(), cov
        var = (kernel_diag(self.hyperparameters.kernel, Xs)
               - np.einsum("ij,ij->j", P, P) + np.einsum("ij,ij->j", R, R))
        return mean, var, None

    def predict(self, Xs, full_cov: bool = False) -> GaussianPrediction:
        mean, var, cov = self.predict_raw(Xs, full_cov)
        var, count = clamp_variance(var, "svgp.predict")
        return GaussianPrediction(mean, var, cov, n_clamped=count)

    def elbo(self) -> float:
        """Collapsed lower bound ``log N(y | 0, Q + noise I) - tr(K_ff - Q) / (2 noise)``."""
        n = self.n
        noise = self.noise_variance
        y = self.train_y
        if n == 0:
            return 0.0
        sigma = np.sqrt(noise)
        A = solve_lower(self.Kuu_factor, self.Kuf) / sigma          # m x n
        B = np.eye(self.m) + A @ A.T
        LB = cholesky_jittered(B)
        c = solve_lower(LB, A @ y) / sigma
        logdet = n * np.log(noise) + LB.logdet()
        quad = float(y @ y) / noise - float(c @ c)
        trace = float(np.sum(kernel_diag(self.hyperparameters.kernel, self.train_X))) \
            - noise * float(np.sum(A * A))
        return -0.5 * (n * LOG_2PI + logdet + quad) - 0.5 * trace / noise

    def elbo_gradient(self, params=None, rel_step: float = 1e-5) -> np.ndarray:
        """Central finite differences of :meth:`elbo`, one entry per selector.

        Selectors are hyperparameter names (see :func:`svgp_param_names`),
        including ``inducing_<j>_<k>`` for entry ``(j, k)`` of ``Z``.
        """
        if params is None:
            params = svgp_param_names(self.hyperparameters.dim, self.m)
        hp = self.hyperparameters
        out = np.empty(len(params))
        for k, name in enumerate(params):
            theta = get_param(hp, name)
            h = rel_step * abs(theta) if theta != 0 else rel_step
            up = SvgpModel(set_param(hp, name, theta + h), self.train_X, self.train_y).elbo()
            down = SvgpModel(set_param(hp, name, theta - h), self.train_X, self.train_y).elbo()
            out[k] = (up - down) / (2.0 * h)
        return out


def svgp_param_names(dim: int, m: int = 0, include_inducing: bool = False) -> list[str]:
    names = param_names(dim)
    if include_inducing:
        names += [f"inducing_{j}_{k}" for j in range(m) for k in range(dim)]
    return names


def _inducing_index(name: str) -> tuple[int, int]:
    try:
        _, j, k = name.split("_")
        return int(j), int(k)
    except ValueError:
        raise UnsupportedParam(f"bad inducing-input selector {name!r}") from None


def get_param(hp: Hyperparameters, name: str) -> float:
    if name.startswith("inducing_"):
        j, k = _inducing_index(name)
        return float(hp.inducing_inputs[j, k])
    return hp.get(name)


def set_param(hp: Hyperparameters, name: str, value: float) -> Hyperparameters:
    if name.startswith("inducing_"):
        j, k = _inducing_index(name)
        Z = np.array(hp.inducing_inputs)
        Z[j, k] = value
        return hp.with_inducing(Z)
    return hp.set(name, value)


def default_inducing_inputs(X, m: int, seed: int = 0) -> np.ndarray:
    """Seeded random subset of ``m`` training inputs (all of them if ``m >= n``)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rng = np.random.default_rng(seed)
    if m >= X.shape[0]:
        return X.copy()
    idx = np.sort(rng.choice(X.shape[0], size=m, replace=False))
    return X[idx].copy()
