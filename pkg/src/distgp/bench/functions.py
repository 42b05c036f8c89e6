"""Synthetic regression targets."""

import numpy as np


def ackley(X, a: float = 20.0, b: float = 0.2, c: float = 2 * np.pi) -> np.ndarray:
    """Ackley function evaluated row-wise; global minimum 0 at the origin."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = X.shape[1]
    rms = np.sqrt(np.sum(X**2, axis=1) / d)
    cos_mean = np.sum(np.cos(c * X), axis=1) / d
    return -a * np.exp(-b * rms) - np.exp(cos_mean) + a + np.e


def griewank(X) -> np.ndarray:
    """``1 + sum x_i^2 / 4000 - prod cos(x_i / sqrt(i))``, row-wise."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    i = np.arange(1, X.shape[1] + 1)
    return 1.0 + np.sum(X**2, axis=1) / 4000.0 - np.prod(np.cos(X / np.sqrt(i)), axis=1)


FUNCTIONS = {"ackley": ackley, "griewank": griewank}
