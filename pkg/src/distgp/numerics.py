"""Dense SPD linear algebra shared by every model in the package.

Cholesky factorization with jitter escalation, triangular/SPD solves and a
symmetric solve that falls back to the minimum-norm least-squares solution
when the system is numerically singular.

Two small pieces of plumbing also live here because every other module
needs them: :func:`parallel_map` (thread pool with deterministic output
order) and :func:`track_allocations` (records the shapes of the matrices a
code path builds, used to check the prediction complexity structurally).
"""

from __future__ import annotations

import contextlib
import contextvars
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, NonPositiveDefinite

log = logging.getLogger(__name__)

JITTER_SCALE = 1e-8
MAX_JITTER_STEPS = 6
# Cholesky route is accepted only if (min diag L / max diag L)^2 exceeds this.
FALLBACK_RCOND = 1e-12


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor of ``A + jitter_applied * I``."""

    lower: np.ndarray
    jitter_applied: float = 0.0

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def _check_square(A: np.ndarray, what: str = "matrix") -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"{what} must be square, got shape {A.shape}")


def cholesky_jittered(A, base_jitter: float | None = None) -> SpdFactor:
    """Factorize a symmetric matrix, adding diagonal jitter only if needed.

    Tries ``A`` as given first, then ``A + base_jitter * 10**k * I`` for
    ``k = 0..6``. ``base_jitter`` defaults to ``1e-8 * mean(diag(A))``.

    Raises
    ------
    DimensionMismatch
        If ``A`` is not square.
    NonPositiveDefinite
        If every jitter level fails, or ``A`` is not symmetric.
    """
    A = np.asarray(A, dtype=float)
    _check_square(A)
    n = A.shape[0]
    if n == 0:
        return SpdFactor(np.zeros((0, 0)), 0.0)
    scale = max(np.max(np.abs(A)), np.finfo(float).tiny)
    if np.max(np.abs(A - A.T)) > 1e-12 * scale:
        raise NonPositiveDefinite("matrix is not symmetric")
    if not np.all(np.isfinite(A)):
        raise NonPositiveDefinite("matrix has non-finite entries")
    if base_jitter is None:
        mean_diag = float(np.mean(np.diag(A)))
        base_jitter = JITTER_SCALE * mean_diag if mean_diag > 0 else JITTER_SCALE

    jitters = [0.0] + [base_jitter * 10.0**k for k in range(MAX_JITTER_STEPS + 1)]
    for jitter in jitters:
        try:
            L = linalg.cholesky(A + jitter * np.eye(n), lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.diag(L) > 0):
            if jitter > 0:
                log.debug("cholesky needed jitter %.3g on a %dx%d matrix", jitter, n, n)
            return SpdFactor(L, jitter)
    raise NonPositiveDefinite(
        f"cholesky failed for a {n}x{n} matrix up to jitter {jitters[-1]:.3g}"
    )


def solve_lower(factor: SpdFactor, B) -> np.ndarray:
    """Forward substitution ``L \\ B``."""
    B = np.asarray(B, dtype=float)
    if B.shape[0] != factor.size:
        raise DimensionMismatch(
            f"factor is {factor.size}x{factor.size} but right-hand side has {B.shape[0]} rows"
        )
    if factor.size == 0:
        return np.zeros_like(B)
    return linalg.solve_triangular(factor.lower, B, lower=True, check_finite=False)


def solve_spd(factor: SpdFactor, B) -> np.ndarray:
    """Solve ``(L L^T) X = B`` by forward then back substitution."""
    B = np.asarray(B, dtype=float)
    if B.shape[0] != factor.size:
        raise DimensionMismatch(
            f"factor is {factor.size}x{factor.size} but right-hand side has {B.shape[0]} rows"
        )
    if factor.size == 0:
        return np.zeros_like(B)
    return linalg.cho_solve((factor.lower, True), B, check_finite=False)


def solve_symmetric(A, b) -> tuple[np.ndarray, bool]:
    """Like :func:`solve_symmetric_with_fallback` but also reports the route.

    Returns ``(x, fallback_used)``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_square(A)
    if b.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"A is {A.shape} but b has length {b.shape[0]}")
    if A.shape[0] == 0:
        return np.zeros_like(b), False
    try:
        factor = cholesky_jittered(A)
    except NonPositiveDefinite:
        factor = None
    if factor is not None and factor.jitter_applied == 0.0:
        d = np.diag(factor.lower)
        if (d.min() / d.max()) ** 2 > FALLBACK_RCOND:
            return solve_spd(factor, b), False
    # SVD-based minimum-norm least squares; deterministic for fixed inputs.
    x, *_ = linalg.lstsq(A, b, cond=FALLBACK_RCOND, lapack_driver="gelsd", check_finite=False)
    log.debug("symmetric solve fell back to minimum-norm least squares (n=%d)", A.shape[0])
    return x, True


def solve_symmetric_with_fallback(A, b) -> np.ndarray:
    """Solve a symmetric system, falling back to minimum-norm least squares.

    The Cholesky route is used when ``A`` factorizes without jitter and the
    factor is not close to singular. Otherwise the SVD-based LAPACK ``gelsd``
    least-squares solver returns the minimum-norm solution, with singular
    values below ``1e-12`` times the largest treated as zero.
    """
    return solve_symmetric(A, b)[0]


# -- plumbing ---------------------------------------------------------------


def parallel_map(fn, items, threads: int = 1) -> list:
    """Map ``fn`` over ``items``; output order always matches input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    ctx = contextvars.copy_context()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda item: ctx.copy().run(fn, item), items))


_allocations: contextvars.ContextVar[list | None] = contextvars.ContextVar(
    "distgp_allocations", default=None
)


def record_allocation(tag: str, shape: tuple[int, ...]) -> None:
    """Note that a matrix of ``shape`` was built, if a tracker is active."""
    sink = _allocations.get()
    if sink is not None:
        sink.append((tag, tuple(int(s) for s in shape)))


@contextlib.contextmanager
def track_allocations():
    """Collect ``(tag, shape)`` pairs for every recorded matrix in the block."""
    sink: list = []
    token = _allocations.set(sink)
    try:
        yield sink
    finally:
        _allocations.reset(token)
