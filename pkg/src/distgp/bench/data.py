"""Dataset generation, CSV reading/writing and train/test splitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..containers import Dataset
from ..errors import EmptyDataset, ParseError
from ..kernels import Hyperparameters, kernel_matrix
from ..numerics import cholesky_jittered
from .functions import FUNCTIONS


def uniform_inputs(n: int, d: int, low=-1.0, high=1.0, rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    return rng.uniform(low, high, size=(n, d))


def lattice(points_per_dim: int, d: int, low=-1.0, high=1.0) -> np.ndarray:
    """Evenly spaced grid over ``[low, high]^d`` including the end points."""
    axis = np.linspace(low, high, points_per_dim)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def test_inputs(n_t: int, d: int, low=-1.0, high=1.0) -> np.ndarray:
    """Evenly spaced lattice with about ``n_t`` points.

    The per-dimension count is ``round(n_t ** (1/d))``, so ``n_t`` is exact
    only when it is a perfect d-th power (e.g. 400 = 20 x 20).
    """
    per_dim = max(1, int(round(n_t ** (1.0 / d))))
    return lattice(per_dim, d, low, high)


def function_dataset(name: str, n: int, d: int, noise_variance: float, seed: int,
                     low=-1.0, high=1.0) -> Dataset:
    """Uniform inputs, targets ``f(x) + N(0, noise_variance)``."""
    f = FUNCTIONS[name]
    rng = np.random.default_rng(seed)
    X = rng.uniform(low, high, size=(n, d))
    y = f(X) + np.sqrt(noise_variance) * rng.standard_normal(n)
    return Dataset(X, y)


def sample_gp_dataset(hp: Hyperparameters, n: int, seed: int, low=-1.0, high=1.0) -> Dataset:
    """Exact draw ``y ~ N(0, K + noise I)`` at uniform inputs, via Cholesky."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(low, high, size=(n, hp.dim))
    K = kernel_matrix(hp.kernel, X)
    K[np.diag_indices(n)] += hp.noise_variance
    L = cholesky_jittered(K).lower
    y = L @ rng.standard_normal(n)
    return Dataset(X, y)


def write_csv(path, dataset: Dataset, feature_names=None, target_name="y") -> None:
    d = dataset.d
    if feature_names is None:
        feature_names = [f"x{i}" for i in range(d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(feature_names) + [target_name])
        for x, y in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def read_csv(path, target_column=None) -> tuple[Dataset, list[str], str]:
    """Read a header + numeric rows CSV; the target defaults to the last column."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        if target_column is None:
            target_column = header[-1]
        if target_column not in header:
            raise ParseError(f"target column {target_column!r} not in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=lineno)
            values = []
            for name, cell in zip(header, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(f"non-numeric value {cell!r}", row=lineno, column=name) from None
            rows.append(values)
    if not rows:
        raise EmptyDataset(f"{path} has a header but no data rows")
    data = np.array(rows)
    t = header.index(target_column)
    features = [h for k, h in enumerate(header) if k != t]
    X = np.delete(data, t, axis=1)
    return Dataset(X, data[:, t]), features, target_column


@dataclass(frozen=True)
class Standardizer:
    """Z-score parameters fitted on the training split."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, ds: Dataset) -> "Standardizer":
        x_std = ds.X.std(axis=0)
        y_std = float(ds.y.std())
        return cls(ds.X.mean(axis=0), np.where(x_std > 0, x_std, 1.0),
                   float(ds.y.mean()), y_std if y_std > 0 else 1.0)

    def apply(self, ds: Dataset) -> Dataset:
        return Dataset((ds.X - self.x_mean) / self.x_std, (ds.y - self.y_mean) / self.y_std)

    def inverse_targets(self, y) -> np.ndarray:
        return np.asarray(y) * self.y_std + self.y_mean

    def inverse_variance(self, var) -> np.ndarray:
        return np.asarray(var) * self.y_std**2


def ingest_csv(path, target_column=None, split_ratio: float = 0.8, seed: int = 0,
               standardize: bool = False):
    """Seeded shuffle and split into ``(train, test, standardizer)``.

    The standardizer is ``None`` unless ``standardize`` is set; it is fitted
    on the training split only.
    """
    if not 0 < split_ratio < 1:
        raise ValueError(f"split_ratio must be in (0, 1), got {split_ratio}")
    ds, _, _ = read_csv(path, target_column)
    perm = np.random.default_rng(seed).permutation(ds.n)
    n_train = int(round(split_ratio * ds.n))
    n_train = min(max(n_train, 1), ds.n)
    train, test = ds.subset(perm[:n_train]), ds.subset(perm[n_train:])
    scaler = None
    if standardize:
        scaler = Standardizer.fit(train)
        train, test = scaler.apply(train), scaler.apply(test)
    return train, test, scaler
