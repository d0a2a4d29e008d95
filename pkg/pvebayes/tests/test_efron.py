import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import poisson

from pvebayes import efron
from pvebayes.efron import EfronConfig, build_spline_basis, \
    efron_objective_and_gradient, fit_efron
from pvebayes.general_gamma import included_cells
from pvebayes.km import LikelihoodMatrix, fit_km
from pvebayes.utils import DataError, NumericalError
from pvebayes.tests.utils import poisson_table


def _small_problem(seed, size=(8, 8), E=10.0):
    prng = np.random.RandomState(seed)
    lam = prng.gamma(4.0, 0.25, size=size)
    table = poisson_table(lam, E, prng)
    return table, np.full(size, E)


def test_spline_basis():
    support = np.geomspace(0.01, 20.0, 60)
    Q = build_spline_basis(support, 8)
    assert Q.shape == (60, 8)
    assert_allclose(Q.T @ Q, np.eye(8), atol=1.0e-10)
    assert_allclose(Q.sum(axis=0), 0.0, atol=1.0e-10)
    assert_allclose(np.linalg.norm(Q, axis=0), 1.0, atol=1.0e-12)
    q1 = build_spline_basis(support, 1)[:, 0]
    d = np.diff(q1)
    assert np.all(d > 0.0) or np.all(d < 0.0)
    with pytest.raises(DataError):
        build_spline_basis([1.0, 1.0, 2.0], 1)
    with pytest.raises(ValueError):
        build_spline_basis(support, 60)
    with pytest.raises(ValueError):
        EfronConfig(K=10, p=10)


def test_objective_and_gradient():
    prng = np.random.RandomState(3)
    P = prng.uniform(0.01, 1.0, size=(30, 20))
    Q = build_spline_basis(np.geomspace(0.1, 10.0, 20), 5)
    value0, _ = efron_objective_and_gradient(np.zeros(5), P, Q, 0.3)
    assert_allclose(value0, np.sum(np.log(P.mean(axis=1))), rtol=1.0e-12)
    for _ in range(5):
        a = 0.5*prng.normal(size=5)
        value, grad = efron_objective_and_gradient(a, P, Q, 0.01)
        h = 1.0e-6
        fd = np.array([(efron_objective_and_gradient(a+h*ek, P, Q, 0.01)[0] -
                        efron_objective_and_gradient(a-h*ek, P, Q, 0.01)[0]) /
                       (2.0*h) for ek in np.eye(5)])
        assert_allclose(grad, fd, rtol=1.0e-5, atol=1.0e-5)
    # the penalty at a unit vector
    a = np.ones(5)/np.sqrt(5.0)
    v0, g0 = efron_objective_and_gradient(a, P, Q, 0.0)
    v1, g1 = efron_objective_and_gradient(a, P, Q, 0.5)
    assert_allclose(v1 - v0, -0.5, rtol=1.0e-12)
    assert_allclose(g1 - g0, -0.5*a, atol=1.0e-12)


def test_scaled_likelihood_matrix():
    table, E = _small_problem(4)
    n, e = included_cells(table, E, True)
    support = np.geomspace(0.05, 5.0, 30)
    raw = poisson.pmf(n[:, np.newaxis], support*e[:, np.newaxis])
    Q = build_spline_basis(support, 6)
    a = np.linspace(-1.0, 1.0, 6)
    v_raw, g_raw = efron_objective_and_gradient(a, raw, Q, 0.01)
    v_lm, g_lm = efron_objective_and_gradient(
        a, LikelihoodMatrix(n, e, support), Q, 0.01)
    assert_allclose(v_lm, v_raw, rtol=1.0e-10)
    assert_allclose(g_lm, g_raw, rtol=1.0e-8, atol=1.0e-10)


def test_large_penalty_gives_uniform():
    table, E = _small_problem(5)
    fit = fit_efron(table, E, EfronConfig(K=40, p=5, c0=1.0e6, seed=0))
    assert fit.model == "efron"
    assert_allclose(fit.prior.masses, 1.0/40)
    assert fit.meta["iterations"] == 0


def test_stationarity():
    table, E = _small_problem(6)
    cfg = EfronConfig(K=40, p=5, c0=0.01, seed=0)
    fit = fit_efron(table, E, cfg)
    assert fit.meta["converged"]
    n, e = included_cells(table, E, True)
    P = LikelihoodMatrix(n, e, fit.prior.support)
    Q = build_spline_basis(fit.prior.support, 5)
    value, grad = efron_objective_and_gradient(
        np.array(fit.meta["alpha_hat"]), P, Q, 0.01)
    assert np.linalg.norm(grad) <= cfg.grad_tol*(1.0+abs(value))
    assert_allclose(fit.prior.masses.sum(), 1.0)
    assert np.all(fit.prior.masses > 0.0)


def test_objective_never_decreases():
    table, E = _small_problem(8)
    fit = fit_efron(table, E, EfronConfig(K=60, p=10, c0=0.01, seed=2))
    trace = np.array(fit.meta["objective_trace"])
    assert trace.size >= 2
    assert np.all(np.diff(trace) >= 0.0)
    assert trace[-1] > trace[0]


def test_line_search_failure(monkeypatch):
    real_minimize = efron.minimize

    def _failing_minimize(*args, **kwargs):
        res = real_minimize(*args, **kwargs)
        res.success = False
        res.message = "ABNORMAL_TERMINATION_IN_LNSRCH"
        return res

    monkeypatch.setattr(efron, "minimize", _failing_minimize)
    table, E = _small_problem(6)
    with pytest.raises(NumericalError, match="line search failed"):
        fit_efron(table, E, EfronConfig(K=40, p=5, c0=0.01, seed=0))


def test_saturated_basis_matches_npmle():
    table, E = _small_problem(7)
    grid = np.geomspace(0.2, 4.0, 8)
    km = fit_km(table, E, grid=grid)
    ef = fit_efron(table, E, EfronConfig(p=7, c0=0.0), grid=grid)
    # the NPMLE optimality gap bounds how far km.loglik is from the optimum
    assert ef.loglik <= km.loglik + max(km.meta["gap"], 0.0) + 1.0e-9
    assert ef.loglik >= km.loglik - 1.0e-3
