import numpy as np
import pytest
from hypothesis import given, strategies as st

from distgp.errors import DimensionMismatch, NonPositiveDefinite
from distgp.numerics import (cholesky_jittered, parallel_map, record_allocation, solve_lower,
                             solve_spd, solve_symmetric, solve_symmetric_with_fallback,
                             track_allocations)

from conftest import random_spd


def test_identity_needs_no_jitter():
    f = cholesky_jittered(np.eye(3), base_jitter=1e-8)
    assert f.jitter_applied == 0
    np.testing.assert_array_equal(f.lower, np.eye(3))


def test_two_by_two_factor():
    f = cholesky_jittered(np.array([[4.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(f.lower, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], rtol=1e-14)


def test_rank_one_gets_jitter():
    A = np.ones((2, 2))
    f = cholesky_jittered(A)
    assert f.jitter_applied > 0
    np.testing.assert_allclose(f.reconstruct(), A + f.jitter_applied * np.eye(2), rtol=1e-12)


def test_indefinite_raises():
    with pytest.raises(NonPositiveDefinite):
        cholesky_jittered(np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_non_square_raises():
    with pytest.raises(DimensionMismatch):
        cholesky_jittered(np.ones((2, 3)))


def test_asymmetric_rejected():
    with pytest.raises(ValueError):
        cholesky_jittered(np.array([[2.0, 1.0], [0.0, 2.0]]))


def test_solve_spd_hand_value():
    f = cholesky_jittered(np.array([[4.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(solve_spd(f, np.array([[1.0], [0.0]])), [[0.375], [-0.25]], rtol=1e-14)


def test_solve_spd_identity_passthrough(rng):
    B = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(solve_spd(cholesky_jittered(np.eye(4)), B), B)


def test_solve_spd_against_inverse(rng):
    A = random_spd(rng, 10, cond=1e3)
    B = rng.standard_normal((10, 2))
    got = solve_spd(cholesky_jittered(A), B)
    want = np.linalg.inv(A) @ B
    assert np.linalg.norm(got - want) / np.linalg.norm(want) <= 1e-9


def test_solve_dimension_mismatch():
    f = cholesky_jittered(np.eye(3))
    with pytest.raises(DimensionMismatch):
        solve_spd(f, np.ones(4))
    with pytest.raises(DimensionMismatch):
        solve_lower(f, np.ones((2, 2)))


def test_fallback_identity():
    np.testing.assert_array_equal(solve_symmetric_with_fallback(np.eye(2), np.ones(2)), [1.0, 1.0])


def test_fallback_min_norm():
    x, used = solve_symmetric(np.ones((2, 2)), np.ones(2))
    assert used
    np.testing.assert_allclose(x, [0.5, 0.5], rtol=1e-12)


def test_fallback_well_conditioned(rng):
    A = random_spd(rng, 5, cond=50)
    b = rng.standard_normal(5)
    x, used = solve_symmetric(A, b)
    assert not used
    want = np.linalg.solve(A, b)
    assert np.linalg.norm(x - want) / np.linalg.norm(want) <= 1e-9


def test_fallback_matches_pinv_on_singular(rng):
    V = rng.standard_normal((5, 2))
    A = V @ V.T
    b = A @ rng.standard_normal(5)
    x, used = solve_symmetric(A, b)
    assert used
    np.testing.assert_allclose(x, np.linalg.pinv(A) @ b, rtol=1e-8, atol=1e-10)


def test_fallback_deterministic(rng):
    A = np.ones((3, 3))
    b = rng.standard_normal(3)
    a1 = solve_symmetric_with_fallback(A, b)
    a2 = solve_symmetric_with_fallback(A.copy(), b.copy())
    assert a1.tobytes() == a2.tobytes()


def test_fallback_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        solve_symmetric_with_fallback(np.eye(2), np.ones(3))


@given(st.integers(2, 12), st.floats(0.0, 8.0), st.integers(0, 2**31 - 1))
def test_reconstruction_property(n, log_cond, seed):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, n, cond=10**log_cond)
    f = cholesky_jittered(A)
    assert np.all(np.diag(f.lower) > 0)
    err = np.linalg.norm(f.reconstruct() - (A + f.jitter_applied * np.eye(n)))
    assert err / np.linalg.norm(A) <= 1e-10


@given(st.integers(2, 12), st.floats(0.0, 6.0), st.integers(0, 2**31 - 1))
def test_solve_recovers_x0(n, log_cond, seed):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, n, cond=10**log_cond)
    x0 = rng.standard_normal(n)
    x = solve_spd(cholesky_jittered(A), A @ x0)
    assert np.linalg.norm(x - x0) / np.linalg.norm(x0) <= 1e-8


def test_parallel_map_keeps_order():
    assert parallel_map(lambda v: v * v, range(20), threads=4) == [v * v for v in range(20)]


def test_allocation_tracking_sees_worker_threads():
    with track_allocations() as log:
        parallel_map(lambda k: record_allocation("t", (k, k)), range(3), threads=3)
    assert sorted(s for _, s in log) == [(0, 0), (1, 1), (2, 2)]
