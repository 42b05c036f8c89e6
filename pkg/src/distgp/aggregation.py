"""Combining expert predictions.

Baselines: PoE, gPoE, BCM, rBCM (precision-weighted products), grBCM
(augmented experts sharing a communication shard) and NPAE (covariance-aware
nested aggregation, exact experts only).

Optimal weights: each expert's posterior mean is a kernel expansion with
weights ``alpha_i``; the weights ``beta`` minimize the residual between the
prior function and ``sum_i beta_i P_i f`` under an RLS scalar product that is
approximated on a small central subset (one point per shard). Then
``A beta = diag(A)`` with

* SVGP:  ``A[i, j] = alpha_i^T (K_uu + K_uc K_cu / noise) alpha_j / noise``
* exact: ``A[i, j] = alpha_i^T (K_ij + K_ic K_cj) alpha_j``

and the aggregated prediction is ``sum_i beta_i mu_i`` with variance
``sum_i beta_i^2 * (explained variance of expert i)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .containers import Dataset, GaussianPrediction, clamp_variance
from .errors import DegeneratePrecision, TooFewExperts
from .exact_gp import ExactGpModel
from .experts import CentralSubset, Partition, select_central
from .kernels import Hyperparameters, kernel_diag, kernel_matrix
from .numerics import (cholesky_jittered, parallel_map, record_allocation, solve_lower,
                       solve_spd, solve_symmetric)
from .svgp import SvgpModel

log = logging.getLogger(__name__)

POE_RULES = ("poe", "gpoe", "bcm", "rbcm")
MODELS = ("exact", "svgp")


@dataclass
class ExpertEnsemble:
    """Experts fitted on the shards of one partition with shared hyperparameters."""

    experts: list
    partition: Partition
    central: CentralSubset
    dataset: Dataset
    hyperparameters: Hyperparameters
    model: str

    @property
    def M(self) -> int:
        return len(self.experts)

    @property
    def noise_variance(self) -> float:
        return self.hyperparameters.noise_variance

    @property
    def kernel(self):
        return self.hyperparameters.kernel

    def local_predictions(self, Xs, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Stacked latent means and variances, each of shape (M, n_t)."""
        preds = parallel_map(lambda e: _predict(e, Xs), self.experts, threads)
        return np.array([p.mean for p in preds]), np.array([p.variance for p in preds])

    def fit_like(self, X, y):
        return fit_expert(self.model, self.hyperparameters, X, y)


def fit_expert(model: str, hp: Hyperparameters, X, y):
    if model == "exact":
        return ExactGpModel(hp, X, y)
    if model == "svgp":
        return SvgpModel(hp, X, y)
    raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


def _predict(expert, Xs) -> GaussianPrediction:
    if isinstance(expert, ExactGpModel):
        return expert.posterior(Xs)
    return expert.predict(Xs)


def build_ensemble(dataset: Dataset, part: Partition, hp: Hyperparameters, model: str = "exact",
                   central_seed: int = 0, threads: int = 1) -> ExpertEnsemble:
    """Fit one expert per shard; SVGP experts share ``hp.inducing_inputs``."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    if model == "svgp" and hp.inducing_inputs is None:
        raise ValueError("SVGP ensembles need shared inducing inputs")
    shards = part.split(dataset)
    experts = parallel_map(lambda s: fit_expert(model, hp, s.X, s.y), shards, threads)
    return ExpertEnsemble(experts, part, select_central(part, central_seed), dataset, hp, model)


def prior_variance(ensemble: ExpertEnsemble, Xs) -> np.ndarray:
    """``k(x, x) + noise`` at every test point."""
    return kernel_diag(ensemble.kernel, Xs) + ensemble.noise_variance


# -- PoE family -------------------------------------------------------------


def poe_weights(rule: str, local_var: np.ndarray, prior_var: np.ndarray) -> np.ndarray:
    M = local_var.shape[0]
    if rule in ("poe", "bcm"):
        return np.ones_like(local_var)
    if rule == "gpoe":
        return np.full_like(local_var, 1.0 / M)
    if rule == "rbcm":
        return 0.5 * (np.log(prior_var)[None, :] - np.log(local_var))
    raise ValueError(f"unknown rule {rule!r}; expected one of {POE_RULES}")


def aggregate_poe_family(ensemble: ExpertEnsemble, Xs, rule: str = "poe",
                         threads: int = 1) -> GaussianPrediction:
    """Precision-weighted combination of the experts' predictions.

    The prior-precision correction ``(1 - sum beta) / (k + noise)`` is added
    for BCM and rBCM only.
    """
    rule = rule.lower()
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    mu, var = ensemble.local_predictions(Xs, threads)
    prior = prior_variance(ensemble, Xs)
    beta = poe_weights(rule, var, prior)
    with np.errstate(divide="ignore"):
        prec_i = 1.0 / var
    precision = np.sum(beta * prec_i, axis=0)
    if rule in ("bcm", "rbcm"):
        precision = precision + (1.0 - beta.sum(axis=0)) / prior
    precision = _guard_precision(precision, prior, f"aggregate_{rule}")
    agg_var = 1.0 / precision
    mean = agg_var * np.sum(beta * prec_i * mu, axis=0)
    return GaussianPrediction(mean, agg_var, extras={"beta": beta})


def _guard_precision(precision: np.ndarray, prior: np.ndarray, where: str) -> np.ndarray:
    bad = ~(precision > 0) | ~np.isfinite(precision)
    if np.any(bad):
        if np.all(bad):
            raise DegeneratePrecision(f"{where}: no test point has a positive aggregated precision")
        log.warning("%s: %d non-positive aggregated precisions clamped to the prior",
                    where, int(bad.sum()))
        precision = np.where(bad, 1.0 / prior, precision)
    return precision


# -- grBCM --------------------------------------------------------------------


def aggregate_grbcm(ensemble: ExpertEnsemble, Xs, threads: int = 1) -> GaussianPrediction:
    """Generalized robust BCM with shard 1 as the communication set."""
    if ensemble.M < 2:
        raise TooFewExperts("grBCM needs at least two experts")
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    index_sets = ensemble.partition.shards
    comm_pred = _predict(ensemble.experts[0], Xs)

    def augmented(shard):
        # set union of indices: equal to concatenation for disjoint shards
        data = ensemble.dataset.subset(np.union1d(index_sets[0], shard))
        return _predict(ensemble.fit_like(data.X, data.y), Xs)

    plus = parallel_map(augmented, index_sets[1:], threads)
    mu_p = np.array([p.mean for p in plus])
    var_p = np.array([p.variance for p in plus])
    with np.errstate(divide="ignore"):
        prec_p = 1.0 / var_p
        prec_c = 1.0 / comm_pred.variance
        log_var_c = np.log(comm_pred.variance)
        beta = np.empty_like(var_p)
        beta[0] = 1.0
        beta[1:] = 0.5 * (log_var_c[None, :] - np.log(var_p[1:]))
    excess = beta.sum(axis=0) - 1.0
    precision = np.sum(beta * prec_p, axis=0) - excess * prec_c
    precision = _guard_precision(precision, prior_variance(ensemble, Xs), "aggregate_grbcm")
    agg_var = 1.0 / precision
    weighted = np.sum(beta * prec_p * mu_p, axis=0)
    if np.any(excess != 0):
        weighted = weighted - excess * prec_c * comm_pred.mean
    mean = agg_var * weighted
    return GaussianPrediction(mean, agg_var, extras={"beta": beta})


# -- NPAE ---------------------------------------------------------------------


def aggregate_npae(ensemble: ExpertEnsemble, Xs, threads: int = 1) -> GaussianPrediction:
    """Nested pointwise aggregation using the covariances between expert means."""
    if ensemble.model != "exact":
        raise ValueError("NPAE is only defined for exact-GP ensembles")
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    n_t, M = Xs.shape[0], ensemble.M
    experts: list[ExactGpModel] = ensemble.experts
    kern = ensemble.kernel

    def local(e: ExactGpModel):
        Ksf = e.cross_kernel(Xs)
        W = solve_spd(e.cached_factor, Ksf.T)            # Ktilde_i^{-1} K_{f_i *}
        return Ksf @ e.cached_alpha, W, np.einsum("ij,ji->i", Ksf, W)

    locals_ = parallel_map(local, experts, threads)
    mu = np.array([l[0] for l in locals_])               # (M, n_t)
    k_A = np.array([l[2] for l in locals_])              # cov[mu_i, y*]
    K_A = np.zeros((n_t, M, M))
    K_A[:, np.arange(M), np.arange(M)] = k_A.T

    pairs = [(i, j) for i in range(M) for j in range(i + 1, M)]

    def cross(pair):
        i, j = pair
        Kij = kernel_matrix(kern, experts[i].train_X, experts[j].train_X)
        record_allocation("npae.K_ij", Kij.shape)
        return np.einsum("aj,aj->j", locals_[i][1], Kij @ locals_[j][1])

    for (i, j), v in zip(pairs, parallel_map(cross, pairs, threads)):
        K_A[:, i, j] = K_A[:, j, i] = v

    prior = kernel_diag(kern, Xs)
    mean = np.empty(n_t)
    var = np.empty(n_t)
    for t in range(n_t):
        record_allocation("npae.K_AA", (M, M))
        factor = cholesky_jittered(K_A[t], base_jitter=1e-10 * max(prior[t], 1e-300))
        w = solve_spd(factor, k_A[:, t])
        mean[t] = w @ mu[:, t]
        var[t] = prior[t] - w @ k_A[:, t] + ensemble.noise_variance
    var, count = clamp_variance(var, "aggregate_npae")
    return GaussianPrediction(mean, var, n_clamped=count)


# -- optimal weights ------------------------------------------------------------


@dataclass
class WeightSolution:
    beta: np.ndarray
    gram: np.ndarray
    fallback_used: bool = False

    def functional(self, beta) -> float:
        """``beta^T A beta - 2 beta^T diag(A)``; the constant term is dropped."""
        beta = np.asarray(beta, dtype=float)
        return float(beta @ self.gram @ beta - 2.0 * beta @ np.diag(self.gram))


def _solve_weights(A: np.ndarray) -> WeightSolution:
    beta, fallback = solve_symmetric(A, np.diag(A).copy())
    return WeightSolution(beta, A, fallback)


def _fill_symmetric(M: int, cell, threads: int) -> np.ndarray:
    pairs = [(i, i + t) for t in range(M) for i in range(M - t)]
    A = np.zeros((M, M))
    record_allocation("opt.A", A.shape)
    for (i, j), v in zip(pairs, parallel_map(cell, pairs, threads)):
        A[i, j] = A[j, i] = v
    return A


def central_inputs(ensemble: ExpertEnsemble) -> np.ndarray:
    return ensemble.dataset.X[ensemble.central.indices]


def optimal_weights_svgp(ensemble: ExpertEnsemble, threads: int = 1) -> WeightSolution:
    if ensemble.model != "svgp":
        raise ValueError("optimal_weights_svgp needs an SVGP ensemble")
    experts: list[SvgpModel] = ensemble.experts
    noise = ensemble.noise_variance
    Z = ensemble.hyperparameters.inducing_inputs
    Kuc = kernel_matrix(ensemble.kernel, Z, central_inputs(ensemble))
    record_allocation("opt.K_uc", Kuc.shape)
    Kuu = experts[0].Kuu
    Mc = Kuu + (Kuc @ Kuc.T) / noise
    record_allocation("opt.M_c", Mc.shape)
    Mc_alpha = [Mc @ e.alpha for e in experts]

    def cell(pair):
        i, j = pair
        return float(experts[i].alpha @ Mc_alpha[j]) / noise

    return _solve_weights(_fill_symmetric(ensemble.M, cell, threads))


def optimal_weights_exact(ensemble: ExpertEnsemble, threads: int = 1) -> WeightSolution:
    if ensemble.model != "exact":
        raise ValueError("optimal_weights_exact needs an exact-GP ensemble")
    experts: list[ExactGpModel] = ensemble.experts
    kern = ensemble.kernel
    Xc = central_inputs(ensemble)
    # K_{c f_i} alpha_i, one vector of length n_c per expert
    central_fit = [kernel_matrix(kern, Xc, e.train_X) @ e.cached_alpha for e in experts]

    def cell(pair):
        i, j = pair
        ei, ej = experts[i], experts[j]
        if i == j:
            Kij = kernel_matrix(kern, ei.train_X)
        else:
            Kij = kernel_matrix(kern, ei.train_X, ej.train_X)
        rkhs = float(ei.cached_alpha @ (Kij @ ej.cached_alpha))
        return rkhs + float(central_fit[i] @ central_fit[j])

    return _solve_weights(_fill_symmetric(ensemble.M, cell, threads))


def optimal_weights(ensemble: ExpertEnsemble, threads: int = 1) -> WeightSolution:
    if ensemble.model == "svgp":
        return optimal_weights_svgp(ensemble, threads)
    return optimal_weights_exact(ensemble, threads)


def aggregate_opt_svgp(ensemble: ExpertEnsemble, weights: WeightSolution, Xs,
                       threads: int = 1) -> GaussianPrediction:
    """``sum beta_i mu_i`` and ``sum beta_i^2 K_*u M_i^{-1} K_u*``."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    experts: list[SvgpModel] = ensemble.experts
    Ksu = experts[0].cross_kernel(Xs)

    def term(k):
        e = experts[k]
        R = solve_lower(e.cached_factor, Ksu.T)
        return Ksu @ e.alpha, np.einsum("ij,ij->j", R, R)

    parts = parallel_map(term, range(ensemble.M), threads)
    mean = np.zeros(Xs.shape[0])
    var = np.zeros(Xs.shape[0])
    for b, (m_k, v_k) in zip(weights.beta, parts):
        mean += b * m_k
        var += b * b * v_k
    mean /= ensemble.noise_variance
    var, count = clamp_variance(var, "aggregate_opt_svgp")
    return GaussianPrediction(mean, var, n_clamped=count, extras={"beta": weights.beta})


def aggregate_opt_exact(ensemble: ExpertEnsemble, weights: WeightSolution, Xs,
                        threads: int = 1) -> GaussianPrediction:
    """``sum beta_i K_{*f_i} alpha_i`` and ``sum beta_i^2 K_{*f_i} Ktilde_i^{-1} K_{f_i *}``."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    experts: list[ExactGpModel] = ensemble.experts

    def term(e: ExactGpModel):
        Ksf = e.cross_kernel(Xs)
        return Ksf @ e.cached_alpha, e.explained_variance(Xs, Ksf)

    parts = parallel_map(term, experts, threads)
    mean = np.zeros(Xs.shape[0])
    var = np.zeros(Xs.shape[0])
    for b, (m_k, v_k) in zip(weights.beta, parts):
        mean += b * m_k
        var += b * b * v_k
    var, count = clamp_variance(var, "aggregate_opt_exact")
    return GaussianPrediction(mean, var, n_clamped=count, extras={"beta": weights.beta})


def aggregate_opt(ensemble: ExpertEnsemble, Xs, weights: WeightSolution | None = None,
                  threads: int = 1) -> GaussianPrediction:
    if weights is None:
        weights = optimal_weights(ensemble, threads)
    if ensemble.model == "svgp":
        return aggregate_opt_svgp(ensemble, weights, Xs, threads)
    return aggregate_opt_exact(ensemble, weights, Xs, threads)


AGGREGATORS = ("poe", "gpoe", "bcm", "rbcm", "grbcm", "npae", "opt")


def aggregate(ensemble: ExpertEnsemble, Xs, rule: str, threads: int = 1) -> GaussianPrediction:
    """Dispatch by aggregator name (case-insensitive)."""
    rule = rule.lower()
    if rule in POE_RULES:
        return aggregate_poe_family(ensemble, Xs, rule, threads)
    if rule == "grbcm":
        return aggregate_grbcm(ensemble, Xs, threads)
    if rule == "npae":
        return aggregate_npae(ensemble, Xs, threads)
    if rule == "opt":
        return aggregate_opt(ensemble, Xs, threads=threads)
    raise ValueError(f"unknown aggregator {rule!r}; expected one of {AGGREGATORS}")
