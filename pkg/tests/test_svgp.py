import numpy as np
import pytest
from hypothesis import given, strategies as st

from distgp.errors import DimensionMismatch
from distgp.exact_gp import ExactGpModel
from distgp.kernels import Hyperparameters, kernel_diag, kernel_matrix
from distgp.svgp import SvgpModel, default_inducing_inputs, svgp_param_names


def _problem(rng, n, d, m, noise=0.1, ls=0.5):
    X = rng.uniform(-1, 1, (n, d))
    y = np.sin(3 * X).sum(axis=1) + np.sqrt(noise) * rng.standard_normal(n)
    Z = rng.uniform(-1, 1, (m, d))
    return Hyperparameters.create([ls] * d, 1.0, noise, inducing_inputs=Z), X, y


def _dense_elbo(hp, X, y):
    Z = hp.inducing_inputs
    s2 = hp.noise_variance
    Kuu = kernel_matrix(hp.kernel, Z)
    Kuf = kernel_matrix(hp.kernel, Z, X)
    Q = Kuf.T @ np.linalg.solve(Kuu, Kuf)
    C = Q + s2 * np.eye(len(y))
    _, logdet = np.linalg.slogdet(C)
    ll = -0.5 * (y @ np.linalg.solve(C, y) + logdet + len(y) * np.log(2 * np.pi))
    return ll - 0.5 * np.trace(kernel_matrix(hp.kernel, X) - Q) / s2


def _dense_predict(hp, X, y, Xs):
    Z = hp.inducing_inputs
    s2 = hp.noise_variance
    Kuu = kernel_matrix(hp.kernel, Z)
    Kuf = kernel_matrix(hp.kernel, Z, X)
    Ksu = kernel_matrix(hp.kernel, Xs, Z)
    Mi = np.linalg.inv(Kuu + Kuf @ Kuf.T / s2)
    mean = Ksu @ Mi @ Kuf @ y / s2
    cov = kernel_matrix(hp.kernel, Xs) - Ksu @ (np.linalg.inv(Kuu) - Mi) @ Ksu.T
    return mean, np.diag(cov), Kuu @ Mi @ Kuf @ y / s2, Kuu @ Mi @ Kuu


def test_zero_targets_zero_mean(rng):
    hp, X, _ = _problem(rng, 10, 1, 4)
    m = SvgpModel(hp, X, np.zeros(10))
    mu, S = m.optimal_variational()
    np.testing.assert_array_equal(mu, 0.0)
    p = m.predict(rng.uniform(-1, 1, (5, 1)))
    np.testing.assert_array_equal(p.mean, 0.0)
    assert np.all(p.variance <= 1.0 + 1e-10)


def test_no_data_recovers_prior(rng):
    hp, _, _ = _problem(rng, 1, 2, 3)
    m = SvgpModel(hp, np.zeros((0, 2)), np.zeros(0))
    np.testing.assert_allclose(m.Muu, m.Kuu)
    np.testing.assert_allclose(m.optimal_variational()[1], m.Kuu, rtol=1e-10)


def test_variational_toy_against_dense(rng):
    hp, X, y = _problem(rng, 3, 1, 2)
    mean, S = SvgpModel(hp, X, y).optimal_variational()
    _, _, mean_o, S_o = _dense_predict(hp, X, y, X)
    np.testing.assert_allclose(mean, mean_o, rtol=1e-9)
    np.testing.assert_allclose(S, S_o, rtol=1e-9)
    assert np.all(np.linalg.eigvalsh(S) >= -1e-12)


def test_predict_toy_against_dense(rng):
    hp, X, y = _problem(rng, 4, 1, 2)
    Xs = rng.uniform(-1, 1, (5, 1))
    mean_o, var_o, _, _ = _dense_predict(hp, X, y, Xs)
    p = SvgpModel(hp, X, y).predict(Xs)
    np.testing.assert_allclose(p.mean, mean_o, rtol=1e-9)
    np.testing.assert_allclose(p.variance, var_o, rtol=1e-9)


def test_elbo_hand_instance(rng):
    hp, X, y = _problem(rng, 3, 1, 1)
    assert SvgpModel(hp, X, y).elbo() == pytest.approx(_dense_elbo(hp, X, y), abs=1e-9)


def test_inducing_at_data_matches_exact(rng):
    X = np.linspace(-1, 1, 12)[:, None]
    y = np.sin(3 * X[:, 0])
    hp = Hyperparameters.create([0.3], 1.0, 0.1, inducing_inputs=X)
    s = SvgpModel(hp, X, y)
    e = ExactGpModel(hp, X, y)
    Xs = rng.uniform(-1, 1, (8, 1))
    np.testing.assert_allclose(s.predict(Xs).mean, e.posterior(Xs).mean, rtol=1e-6)
    assert s.elbo() == pytest.approx(e.log_marginal_likelihood(), abs=1e-6)
    # the trace term vanishes
    A = np.linalg.solve(s.Kuu_factor.lower, s.Kuf)
    trace = kernel_diag(hp.kernel, X).sum() - np.sum(A * A)
    assert abs(trace) <= 1e-8 * 12


def test_empty_test_set(rng):
    hp, X, y = _problem(rng, 10, 1, 3)
    p = SvgpModel(hp, X, y).predict(np.zeros((0, 1)))
    assert p.mean.shape == (0,) and p.variance.shape == (0,)


def test_requires_inducing(rng):
    with pytest.raises(ValueError):
        SvgpModel(Hyperparameters.create([1.0]), np.zeros((2, 1)), np.zeros(2))


def test_dimension_mismatch(rng):
    hp, X, y = _problem(rng, 5, 2, 2)
    with pytest.raises(DimensionMismatch):
        SvgpModel(hp, X, y[:3])
    with pytest.raises(DimensionMismatch):
        SvgpModel(hp, X, y).predict(np.zeros((1, 3)))


def test_gradient_symmetry():
    g = np.linspace(-1, 1, 5)
    X = np.array([[a, b] for a in g for b in g])
    y = np.cos(X[:, 0]) * np.cos(X[:, 1])
    Z = np.array([[a, b] for a in (-0.5, 0.5) for b in (-0.5, 0.5)])
    hp = Hyperparameters.create([0.7, 0.7], 1.0, 0.1, inducing_inputs=Z)
    grad = SvgpModel(hp, X, y).elbo_gradient(["lengthscale_0", "lengthscale_1"])
    assert grad[0] == pytest.approx(grad[1], abs=1e-6)


def test_gradient_second_order(rng):
    hp, X, y = _problem(rng, 30, 1, 5)
    m = SvgpModel(hp, X, y)
    # reference by a much smaller step with Richardson extrapolation
    g1 = m.elbo_gradient(["lengthscale_0"], rel_step=1e-3)[0]
    g2 = m.elbo_gradient(["lengthscale_0"], rel_step=5e-4)[0]
    ref = (4 * g2 - g1) / 3
    e1, e2 = abs(g1 - ref), abs(g2 - ref)
    assert e2 == pytest.approx(e1 / 4, rel=0.05)


def test_gradient_zero_at_scan_optimum(rng):
    hp, X, y = _problem(rng, 40, 1, 6, noise=0.05)
    grid = np.geomspace(1e-3, 2.0, 400)
    vals = [SvgpModel(hp.set("noise_variance", s), X, y).elbo() for s in grid]
    k = int(np.argmax(vals))
    assert 0 < k < len(grid) - 1
    best = grid[k]
    from scipy.optimize import minimize_scalar
    res = minimize_scalar(lambda s: -SvgpModel(hp.set("noise_variance", s), X, y).elbo(),
                          bracket=(grid[k - 1], best, grid[k + 1]), tol=1e-10)
    g = SvgpModel(hp.set("noise_variance", res.x), X, y).elbo_gradient(["noise_variance"])[0]
    assert abs(g) <= 1e-3


def test_inducing_gradient_names():
    assert svgp_param_names(1, 2, include_inducing=True)[-2:] == ["inducing_0_0", "inducing_1_0"]


def test_default_inducing_inputs_seeded(rng):
    X = rng.standard_normal((50, 2))
    a = default_inducing_inputs(X, 10, seed=3)
    assert a.shape == (10, 2)
    np.testing.assert_array_equal(a, default_inducing_inputs(X, 10, seed=3))
    assert all(any(np.array_equal(r, x) for x in X) for r in a)


@given(st.integers(0, 10**6), st.integers(5, 60), st.integers(1, 8))
def test_elbo_bounded_by_lml(seed, n, m):
    rng = np.random.default_rng(seed)
    m = min(m, n - 1)
    hp, X, y = _problem(rng, n, 2, max(m, 1))
    s = SvgpModel(hp, X, y)
    assert s.elbo() <= ExactGpModel(hp, X, y).log_marginal_likelihood() + 1e-8


@given(st.integers(0, 10**6))
def test_nystrom_dominates_explained(seed):
    rng = np.random.default_rng(seed)
    hp, X, y = _problem(rng, 25, 1, 5)
    s = SvgpModel(hp, X, y)
    Xs = rng.uniform(-1.5, 1.5, (10, 1))
    assert np.all(s.nystrom_variance(Xs) >= s.explained_variance(Xs) - 1e-10)
