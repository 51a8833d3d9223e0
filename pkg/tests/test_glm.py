import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from scipy import optimize

from jointaug.glm import (SingularDesignError, _cumulant, fit_glm, fit_irls, fit_ols,
                          hat_trace_df, negloglik, saturated_negloglik)


def _poisson_instance(n=100, k=3, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.normal(size=(n, k - 1)) * 0.5, np.ones(n)])
    beta = rng.uniform(-0.5, 0.5, k)
    return X, rng.poisson(np.exp(X @ beta)).astype(float)


def _bernoulli_instance(n=150, k=3, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.normal(size=(n, k - 1)), np.ones(n)])
    p = 1 / (1 + np.exp(-X @ rng.uniform(-1, 1, k)))
    return X, (rng.uniform(size=n) < p).astype(float)


# -- OLS -------------------------------------------------------------------

def test_orthonormal_design():
    Q = np.linalg.qr(np.random.default_rng(0).normal(size=(30, 4)))[0]
    y = np.random.default_rng(1).normal(size=30)
    np.testing.assert_allclose(fit_ols(Q, y).coefficients, Q.T @ y, atol=1e-12)


@pytest.mark.parametrize("method", ["qr", "cholesky"])
def test_noiseless_recovery(method):
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 6))
    beta = rng.normal(size=6)
    np.testing.assert_allclose(fit_ols(X, X @ beta, method).coefficients, beta, atol=1e-10)


def test_ols_against_normal_equations():
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(200, 10)), rng.normal(size=200)
    ref = np.linalg.solve(X.T @ X, X.T @ y)
    np.testing.assert_allclose(fit_ols(X, y).coefficients, ref, atol=1e-8)
    np.testing.assert_allclose(fit_ols(X, y, "cholesky").coefficients, ref, atol=1e-8)


def test_singular_design_names_column():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(20, 3))
    X = np.column_stack([X, X[:, 1] * 2.0])
    with pytest.raises(SingularDesignError) as err:
        fit_ols(X, rng.normal(size=20))
    assert err.value.column == 3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 4), st.floats(1e-3, 1e3), st.integers(0, 10_000))
def test_ols_column_scaling(k, c, seed):
    rng = np.random.default_rng(seed)
    X, y = rng.normal(size=(40, 5)), rng.normal(size=40)
    b = fit_ols(X, y).coefficients
    Xs = X.copy()
    Xs[:, k] *= c
    bs = fit_ols(Xs, y).coefficients
    expect = b.copy()
    expect[k] /= c
    np.testing.assert_allclose(bs, expect, atol=1e-10 * max(1.0, np.abs(expect).max()), rtol=1e-9)


# -- IRLS ------------------------------------------------------------------

def test_poisson_intercept_only():
    y = np.array([0, 1, 2, 3, 4, 2.0])
    fit = fit_irls(np.ones((6, 1)), y, "poisson")
    assert fit.converged
    assert fit.coefficients[0] == pytest.approx(np.log(y.mean()), abs=1e-10)


def test_bernoulli_balanced_symmetry():
    x = np.array([1.0, -1.0, 1.0, -1.0])
    X = np.column_stack([x, np.ones(4)])
    fit = fit_irls(X, np.array([1.0, 1.0, 0.0, 0.0]), "bernoulli")
    assert fit.converged
    np.testing.assert_allclose(fit.coefficients, 0.0, atol=1e-12)


def _generic_mle(X, y, family):
    def f(b):
        return negloglik(family, X, y, b)

    def g(b):
        _, mu, _ = _cumulant(family, X @ b)
        return X.T @ (mu - y)

    res = optimize.minimize(f, np.zeros(X.shape[1]), jac=g, method="BFGS",
                            options={"gtol": 1e-12, "maxiter": 10_000})
    return res.x


@pytest.mark.parametrize("family,make", [("poisson", _poisson_instance),
                                         ("bernoulli", _bernoulli_instance)])
def test_irls_matches_generic_optimizer(family, make):
    X, y = make()
    fit = fit_irls(X, y, family)
    assert fit.converged
    np.testing.assert_allclose(fit.coefficients, _generic_mle(X, y, family), atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_irls_gradient_small_when_converged(seed):
    X, y = _poisson_instance(seed=seed)
    fit = fit_irls(X, y, "poisson")
    _, mu, _ = _cumulant("poisson", X @ fit.coefficients)
    assert fit.converged and np.max(np.abs(X.T @ (y - mu))) < 1e-6


@pytest.mark.parametrize("family,make", [("poisson", _poisson_instance),
                                         ("bernoulli", _bernoulli_instance)])
def test_analytic_gradient_vs_finite_differences(family, make):
    X, y = make(seed=7)
    rng = np.random.default_rng(8)
    for _ in range(5):
        b = rng.uniform(-0.5, 0.5, X.shape[1])
        _, mu, _ = _cumulant(family, X @ b)
        grad = X.T @ (mu - y)
        h = 1e-5
        fd = np.array([(negloglik(family, X, y, b + h * e) - negloglik(family, X, y, b - h * e))
                       / (2 * h) for e in np.eye(X.shape[1])])
        np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-6)


def test_separation_reports_nonconvergence():
    x = np.array([-2.0, -1.0, 1.0, 2.0])
    X = np.column_stack([x, np.ones(4)])
    fit = fit_irls(X, np.array([0.0, 0.0, 1.0, 1.0]), "bernoulli", max_iter=50)
    assert not fit.converged


def test_fit_glm_dispatch():
    rng = np.random.default_rng(9)
    X, y = rng.normal(size=(30, 3)), rng.normal(size=30)
    np.testing.assert_allclose(fit_glm(X, y, "gaussian").coefficients,
                               fit_ols(X, y).coefficients, atol=1e-10)


def test_ridge_irls_solves_penalized_score():
    X, y = _poisson_instance(seed=3)
    fit = fit_irls(X, y, "poisson", ridge=2.0)
    _, mu, _ = _cumulant("poisson", X @ fit.coefficients)
    np.testing.assert_allclose(X.T @ (y - mu), 2.0 * fit.coefficients, atol=1e-6)


# -- negloglik / deviance --------------------------------------------------

def test_negloglik_perfect_gaussian_fit():
    X = np.eye(3)
    assert negloglik("gaussian", X, [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0


def test_negloglik_poisson_zero_rows():
    X = np.zeros((4, 2))
    assert negloglik("poisson", X, np.zeros(4), [0.3, -0.1]) == pytest.approx(4.0)


@pytest.mark.parametrize("family,make", [("poisson", _poisson_instance),
                                         ("bernoulli", _bernoulli_instance)])
def test_deviance_consistency(family, make):
    X, y = make(seed=11)
    fit = fit_irls(X, y, family)
    ref = 2 * (negloglik(family, X, y, fit.coefficients) - saturated_negloglik(family, y))
    assert fit.deviance == pytest.approx(ref, rel=1e-12)
    assert fit.deviance >= 0


# -- degrees of freedom ----------------------------------------------------

def test_df_no_noise_full_rank():
    X = np.random.default_rng(12).normal(size=(20, 5))
    assert hat_trace_df(X, X) == pytest.approx(5.0, abs=1e-10)


def test_df_vanishes_with_large_noise():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(20, 4))
    dfs = [hat_trace_df(np.vstack([X, np.diag(np.full(4, s))]), X) for s in (1, 10, 1e3, 1e5)]
    assert all(a > b for a, b in zip(dfs, dfs[1:]))
    assert dfs[-1] < 1e-6


def test_df_against_generalized_eigenvalues():
    rng = np.random.default_rng(14)
    X = rng.normal(size=(25, 6))
    E = rng.normal(size=(40, 6)) * rng.uniform(0.1, 2.0, 6)
    Xa = np.vstack([X, E])
    ev = sla.eigh(X.T @ X, Xa.T @ Xa, eigvals_only=True)
    assert hat_trace_df(Xa, X) == pytest.approx(ev.sum(), abs=1e-8)
