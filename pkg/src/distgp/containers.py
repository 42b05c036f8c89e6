"""Plain data containers passed between modules."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, VarianceClampError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Inputs ``X`` (n x d) and targets ``y`` (n,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.X[idx], self.y[idx])

    def __len__(self):
        return self.n


@dataclass
class GaussianPrediction:
    """Per-point predictive mean and variance, optionally a full covariance."""

    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray | None = None
    n_clamped: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.variance = np.asarray(self.variance, dtype=float).reshape(-1)
        if self.mean.shape != self.variance.shape:
            raise DimensionMismatch(
                f"mean has {self.mean.size} entries but variance has {self.variance.size}"
            )

    def __len__(self):
        return self.mean.size

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


def clamp_variance(var: np.ndarray, where: str, max_fraction: float | None = None):
    """Clamp negative variances at zero and log how many were touched.

    If ``max_fraction`` is given and more than that fraction of the entries
    were negative, raise :class:`VarianceClampError` instead.

    Returns ``(clamped, count)``.
    """
    var = np.asarray(var, dtype=float)
    negative = var < 0
    count = int(np.count_nonzero(negative))
    if count:
        log.info("%s: clamped %d of %d negative variances (min %.3g)",
                 where, count, var.size, float(var.min()))
        if max_fraction is not None and count > max_fraction * var.size:
            raise VarianceClampError(
                f"{where}: {count} of {var.size} variances were negative"
            )
        var = np.where(negative, 0.0, var)
    return var, count
