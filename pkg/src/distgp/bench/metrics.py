"""Prediction quality metrics."""

import numpy as np

from ..containers import GaussianPrediction
from ..errors import DimensionMismatch, NonFiniteMetric

LOG_2PI = np.log(2 * np.pi)


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"{pred.size} predictions vs {truth.size} targets")
    value = float(np.sqrt(np.mean((pred - truth) ** 2)))
    if not np.isfinite(value):
        raise NonFiniteMetric("rmse is not finite")
    return value


def nlpd(pred: GaussianPrediction, truth, noise_variance: float = 0.0) -> float:
    """Mean negative log density of ``truth`` under ``N(mean, variance + noise_variance)``.

    Pass ``noise_variance=0`` for predictions whose variance already includes
    the observation noise.
    """
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if len(pred) != truth.size:
        raise DimensionMismatch(f"{len(pred)} predictions vs {truth.size} targets")
    var = pred.variance + noise_variance
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = 0.5 * (LOG_2PI + np.log(var) + (truth - pred.mean) ** 2 / var)
    if not np.all(np.isfinite(terms)):
        raise NonFiniteMetric(f"{int(np.sum(~np.isfinite(terms)))} non-finite NLPD terms")
    return float(np.mean(terms))
