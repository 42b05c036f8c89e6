"""Sparse-grid inducing points and the (optimized) combination technique.

A level vector ``l = (l_1, ..., l_d)`` selects the full grid whose j-th axis
holds the ``2**l_j - 1`` interior dyadic points ``i / 2**l_j``. The
combination technique of level ``eta`` sums SVGP solutions over all ``l``
with ``eta <= |l|_1 <= eta + d - 1`` using signed binomial weights.
OptiCom replaces those weights by the minimizer of the projection residual,
obtained from a Gram system of RLS scalar products between the terms::

    A[i, j] = alpha_i^T (K_{u_i u_j} + K_{u_i f} K_{f u_j} / noise) alpha_j / noise
    A c = diag(A)

The posterior mean uses the solved coefficients; the posterior variance keeps
the classical combination weights.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb, prod

import numpy as np

from .containers import GaussianPrediction, clamp_variance
from .errors import DimensionMismatch, IndexOutOfRange, OverflowGuard
from .kernels import Hyperparameters, kernel_matrix
from .numerics import parallel_map, solve_symmetric
from .svgp import SvgpModel

MAX_GRID_POINTS = 10**7

MultiIndex = tuple  # tuple of positive ints, one level per dimension


def enumerate_indices(eta: int, d: int) -> list[tuple[int, ...]]:
    """All level vectors with ``eta <= |l|_1 <= eta + d - 1``.

    Ordered by ``|l|_1`` and lexicographically within each sum.
    """
    if eta < 1 or d < 1:
        raise ValueError(f"eta and d must be >= 1, got eta={eta}, d={d}")
    out = []
    for total in range(eta, eta + d):
        out.extend(sorted(_compositions(total, d)))
    return out


def _compositions(total: int, parts: int):
    """Tuples of ``parts`` positive ints summing to ``total``."""
    if parts == 1:
        if total >= 1:
            yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def index_count(eta: int, d: int) -> int:
    return sum(comb(s - 1, d - 1) for s in range(eta, eta + d))


def unit_box(d: int) -> np.ndarray:
    return np.tile([0.0, 1.0], (d, 1))


def grid_points(levels, box=None) -> np.ndarray:
    """Full grid for one level vector, mapped affinely into ``box``.

    ``box`` is a (d, 2) array of ``[lower, upper]`` rows, default ``[0, 1]^d``.
    Rows are ordered with the first dimension varying slowest.
    """
    levels = tuple(int(v) for v in levels)
    if any(v < 1 for v in levels):
        raise ValueError(f"levels must be >= 1, got {levels}")
    d = len(levels)
    box = unit_box(d) if box is None else np.asarray(box, dtype=float).reshape(d, 2)
    if np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box lower bounds must be strictly below the upper bounds")
    count = prod(2**v - 1 for v in levels)
    if count > MAX_GRID_POINTS:
        raise OverflowGuard(f"grid {levels} has {count} points (limit {MAX_GRID_POINTS})")
    axes = [
        lo + (hi - lo) * np.arange(1, 2**v) / 2.0**v
        for v, (lo, hi) in zip(levels, box)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.reshape(-1) for a in mesh], axis=1)


def sparse_grid_points(eta: int, d: int, box=None) -> np.ndarray:
    """Union of the grids of all level vectors with ``|l|_1 = eta + d - 1``."""
    pts = np.concatenate([grid_points(l, box) for l in enumerate_indices(eta, d)
                          if sum(l) == eta + d - 1])
    return np.unique(pts, axis=0)


def ct_coefficient(levels, eta: int, d: int) -> int:
    """Classical combination weight ``(-1)^(eta+d-1-|l|) * C(d-1, |l|-eta)``."""
    s = sum(levels)
    if len(levels) != d or not eta <= s <= eta + d - 1 or min(levels) < 1:
        raise IndexOutOfRange(f"{tuple(levels)} is not in the index set for eta={eta}, d={d}")
    return (-1) ** (eta + d - 1 - s) * comb(d - 1, s - eta)


@dataclass
class CombinationTerm:
    """One partial-grid SVGP solve."""

    index: tuple[int, ...]
    grid: np.ndarray
    ct_coefficient: int
    model: SvgpModel

    @property
    def alpha(self) -> np.ndarray:
        return self.model.alpha

    @property
    def factor(self):
        return self.model.cached_factor


@dataclass
class OptiComSolution:
    coefficients: np.ndarray
    gram: np.ndarray
    terms: list[CombinationTerm]
    eta: int
    d: int
    fallback_used: bool = False
    hyperparameters: Hyperparameters | None = field(default=None, repr=False)

    @property
    def ct_coefficients(self) -> np.ndarray:
        return np.array([t.ct_coefficient for t in self.terms], dtype=float)

    def functional(self, c) -> float:
        """Projection residual up to its constant: ``c^T A c - 2 c^T diag(A)``."""
        c = np.asarray(c, dtype=float)
        return float(c @ self.gram @ c - 2.0 * c @ np.diag(self.gram))

    def predict(self, Xs, coefficients=None, full_cov: bool = False,
                threads: int = 1) -> GaussianPrediction:
        """Combined posterior at ``Xs``.

        ``coefficients`` weights the term means; defaults to the solved
        OptiCom coefficients, pass ``"ct"`` for the classical weights. The
        variance always uses the classical weights.
        """
        if coefficients is None:
            coefficients = self.coefficients
        elif isinstance(coefficients, str):
            if coefficients == "ct":
                coefficients = self.ct_coefficients
            elif coefficients == "opticom":
                coefficients = self.coefficients
            else:
                raise ValueError(f"unknown coefficient set {coefficients!r}")
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (len(self.terms),):
            raise DimensionMismatch(
                f"expected {len(self.terms)} coefficients, got shape {coefficients.shape}"
            )
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        n_t = Xs.shape[0]
        parts = parallel_map(lambda t: t.model.predict_raw(Xs, full_cov), self.terms, threads)
        mean = np.zeros(n_t)
        var = np.zeros(n_t)
        cov = np.zeros((n_t, n_t)) if full_cov else None
        for c, term, (m_i, v_i, cov_i) in zip(coefficients, self.terms, parts):
            mean += c * m_i
            var += term.ct_coefficient * v_i
            if full_cov:
                cov += term.ct_coefficient * cov_i
        var, count = clamp_variance(var, "opticom.predict")
        return GaussianPrediction(mean, var, cov, n_clamped=count)


def build_terms(X, y, hp: Hyperparameters, eta: int, d: int, box=None,
                threads: int = 1) -> list[CombinationTerm]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != d:
        raise DimensionMismatch(f"X has {X.shape[1]} columns but d={d}")
    if box is None:
        box = data_box(X)

    def build(levels):
        Z = grid_points(levels, box)
        model = SvgpModel(hp.with_inducing(Z), X, y)
        return CombinationTerm(levels, Z, ct_coefficient(levels, eta, d), model)

    return parallel_map(build, enumerate_indices(eta, d), threads)


def data_box(X) -> np.ndarray:
    """Bounding box of the inputs, one ``[min, max]`` row per dimension."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lo, hi = X.min(axis=0), X.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    return np.stack([lo, hi], axis=1)


def gram_matrix(terms: list[CombinationTerm], threads: int = 1) -> np.ndarray:
    """RLS scalar products between every pair of terms.

    Each cell of the upper triangle is computed once and mirrored, so the
    result does not depend on the thread schedule.
    """
    b = len(terms)
    if b == 0:
        return np.zeros((0, 0))
    noise = terms[0].model.noise_variance
    kern = terms[0].model.hyperparameters.kernel
    # K_{f u_i} alpha_i: term values at the training inputs (times noise).
    fitted = [t.model.Kuf.T @ t.alpha for t in terms]

    def cell(pair):
        i, j = pair
        Ki_j = terms[i].model.Kuu if i == j else kernel_matrix(kern, terms[i].grid, terms[j].grid)
        rkhs = terms[i].alpha @ Ki_j @ terms[j].alpha
        data = fitted[i] @ fitted[j]
        return (rkhs + data / noise) / noise

    pairs = [(i, i + t) for t in range(b) for i in range(b - t)]
    values = parallel_map(cell, pairs, threads)
    A = np.zeros((b, b))
    for (i, j), v in zip(pairs, values):
        A[i, j] = A[j, i] = v
    return A


def opticom_coefficients(X, y, hp: Hyperparameters, eta: int, d: int, box=None,
                         threads: int = 1) -> OptiComSolution:
    """Solve for the optimal combination coefficients.

    Parameters
    ----------
    X, y : training data
    hp : kernel and noise hyperparameters (inducing inputs are ignored)
    eta, d : sparse-grid level and dimension
    box : (d, 2) array, optional
        Domain the unit grids are mapped onto; defaults to the bounding box
        of ``X``.
    threads : int
        Worker threads for the per-term factorizations and Gram cells.
    """
    terms = build_terms(X, y, hp, eta, d, box, threads)
    A = gram_matrix(terms, threads)
    c, fallback = solve_symmetric(A, np.diag(A).copy())
    return OptiComSolution(c, A, terms, eta, d, fallback, hp)


def opticom_posterior(X, y, hp: Hyperparameters, eta: int, d: int, Xs, box=None,
                      full_cov: bool = False, threads: int = 1) -> GaussianPrediction:
    sol = opticom_coefficients(X, y, hp, eta, d, box, threads)
    return sol.predict(Xs, full_cov=full_cov, threads=threads)


def ct_posterior(X, y, hp: Hyperparameters, eta: int, d: int, Xs, box=None,
                 threads: int = 1) -> GaussianPrediction:
    """Classical combination technique (no Gram solve)."""
    terms = build_terms(X, y, hp, eta, d, box, threads)
    sol = OptiComSolution(np.array([t.ct_coefficient for t in terms], dtype=float),
                          np.full((len(terms), len(terms)), np.nan), terms, eta, d, False, hp)
    return sol.predict(Xs, threads=threads)
