import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import minimize
from scipy.special import digamma

from pvebayes.evaluation import detect
from pvebayes.general_gamma import EcmConfig, generate_grid, init_params, \
    expected_latent_counts, fit_ecm, fit_k_gamma, select_alpha, \
    included_cells, _run_ecm, _update_scales
from pvebayes.mixture import nb_log_pmf
from pvebayes.tables import ContingencyTable, load_fixture, \
    expected_natural, expected_reference
from pvebayes.tests.utils import poisson_table, fit_answer_testing


def _gamma_table(shape, rate, size, E, seed):
    prng = np.random.RandomState(seed)
    lam = prng.gamma(shape, 1.0/rate, size=size)
    return poisson_table(lam, E, prng), np.full(size, float(E))


def test_config():
    with pytest.raises(ValueError):
        EcmConfig(dirichlet_alpha=1.0)
    with pytest.raises(ValueError):
        EcmConfig(dirichlet_alpha=0.0)
    with pytest.raises(ValueError):
        EcmConfig(K_init=1)
    assert EcmConfig(K_init=2).K_init == 2
    assert EcmConfig(dirichlet_alpha="auto").dirichlet_alpha == "auto"
    cfg = EcmConfig(K_init=20).replace(dirichlet_alpha=0.5)
    assert cfg.K_init == 20
    assert cfg.dirichlet_alpha == 0.5


def test_init_params():
    prior = init_params([1.0], 1.0e-6)
    assert_allclose(prior.shapes, [1.0e6])
    assert_allclose(prior.scales, [1.0e-6])
    for v in [0.01, 0.3, 7.0]:
        p = init_params([v], 1.0e-6)
        assert_allclose(p.mean, v, rtol=1.0e-10)
        assert_allclose(p.variance, 1.0e-6, rtol=1.0e-6)
    p = init_params(np.geomspace(0.1, 10.0, 5), 1.0e-6)
    assert_allclose(p.weights, 0.2)


def test_generate_grid():
    table = load_fixture("statin46")
    E = expected_reference(table)
    grid = generate_grid(table, E, 100, eps=1.0e-4, prng=7)
    n, e = included_cells(table, E, True)
    assert grid.size == 100
    assert np.all(np.diff(grid) > 0.0)
    assert grid[0] >= 1.0e-4
    assert grid[-1] <= np.maximum(n/e, 1.0e-4).max()*(1.0+1.0e-6)
    # the same seed gives the same grid
    assert_allclose(generate_grid(table, E, 100, prng=7), grid)
    with pytest.raises(ValueError):
        generate_grid(table, E, 1)


def test_generate_grid_constant_ratios():
    table = ContingencyTable(np.outer([1, 2, 3], [2, 3, 4]))
    grid = generate_grid(table, expected_natural(table), 10, eps=1.0e-4)
    assert_allclose(grid[0], 1.0e-4)
    assert_allclose(grid[-1], 1.0)
    assert np.all(np.diff(grid) > 0.0)


def test_expected_latent_counts():
    n = np.array([0.0, 1.0, 5.0, 20.0, 21.0, 500.0, 1.0e6])
    r = np.array([0.3, 2.0, 17.0])[:, np.newaxis]
    exact = r*(digamma(n+r) - digamma(r))
    assert_allclose(expected_latent_counts(n, r), exact, rtol=1.0e-10)
    assert np.all(expected_latent_counts(0.0, r) == 0.0)


def test_scale_update_fixed_point():
    prng = np.random.RandomState(12)
    E = prng.uniform(0.5, 5.0, size=200)
    n = prng.poisson(E*prng.gamma(2.0, 0.5, size=200)).astype("float64")
    tau = prng.dirichlet([1.0, 1.0], size=200)
    r = np.array([2.0, 0.7])
    h = _update_scales(n, E, tau, r, np.ones(2), 1.0e-10)
    den = np.sum(tau*E[:, np.newaxis]*(n[:, np.newaxis]+r) /
                 (1.0+E[:, np.newaxis]*h), axis=0)
    # one more sweep moves no scale by more than h_tol
    assert np.max(np.abs(tau.T @ n/den - h)) < 1.0e-10


def test_ecm_monotone_statin():
    table = load_fixture("statin46")
    E = expected_reference(table)
    fit = fit_ecm(table, E, EcmConfig(dirichlet_alpha=0.75, seed=3))
    trace = fit.trace
    obj = np.array(trace.objective)
    for seg in trace.segments():
        assert np.all(np.diff(obj[seg]) >= -1.0e-6)
    assert fit.prior.K <= 100
    assert np.all(np.diff(trace.active) <= 0)
    assert fit.meta["alpha"] == 0.75
    assert_allclose(fit.prior.weights.sum(), 1.0)


def test_ecm_random_configs():
    prng = np.random.RandomState(2024)
    for k in range(10):
        I, J = prng.randint(8, 15, size=2)
        lam = np.where(prng.uniform(size=(I, J)) < 0.1,
                       prng.uniform(2.0, 5.0, size=(I, J)),
                       prng.gamma(10.0, 0.1, size=(I, J)))
        E = prng.uniform(2.0, 30.0, size=(I, J))
        table = poisson_table(lam, E, prng)
        alpha = [0.01, 0.25, 0.5, 0.75, 0.99][k % 5]
        cfg = EcmConfig(K_init=int(prng.randint(5, 30)),
                        dirichlet_alpha=alpha, max_iter=500, seed=k)
        # a decrease of the objective raises NumericalError
        fit = fit_ecm(table, E, cfg)
        assert np.isfinite(fit.loglik)


def test_ecm_sparsity():
    prng = np.random.RandomState(11)
    lam = np.ones((16, 21))
    lam[:3, :3] = 3.0
    table = poisson_table(lam, 10.0, prng)
    E = np.full(lam.shape, 10.0)
    fit = fit_ecm(table, E, EcmConfig(dirichlet_alpha=0.01, seed=1))
    assert fit.prior.K < 100
    assert fit.trace.active[0] == 100


def test_k_gamma_matches_nb_mle():
    table, E = _gamma_table(2.0, 2.0, (16, 21), 10.0, 31)
    n, e = included_cells(table, E, True)

    def negll(x):
        return -np.sum(nb_log_pmf(n, np.exp(x[0]), np.exp(x[1]), e))

    res = minimize(negll, [0.0, 0.0], method="Nelder-Mead",
                   options={"xatol": 1.0e-10, "fatol": 1.0e-12,
                            "maxiter": 10000})
    fit = fit_k_gamma(table, E, 1)
    assert fit.model == "k-gamma"
    assert fit.prior.K == 1
    assert fit.loglik >= -res.fun - 0.05


def test_k_gamma_recovers_single_gamma():
    table, E = _gamma_table(2.0, 2.0, (40, 41), 10.0, 17)
    fit = fit_k_gamma(table, E, 1)
    assert_allclose(fit.prior.mean, 1.0, rtol=0.05)
    assert_allclose(fit.prior.shapes[0], 2.0, rtol=0.15)
    assert_allclose(fit.prior.rates[0], 2.0, rtol=0.15)


def test_k_gamma_keeps_components():
    table, E = _gamma_table(2.0, 2.0, (12, 12), 10.0, 5)
    fit = fit_k_gamma(table, E, 3, EcmConfig(max_iter=300))
    assert fit.prior.K == 3
    assert all(a == 3 for a in fit.trace.active)
    with pytest.raises(ValueError):
        fit_k_gamma(table, E, 0)


def test_permuted_initialization():
    table, E = _gamma_table(2.0, 2.0, (12, 12), 10.0, 8)
    n, e = included_cells(table, E, True)
    grid = np.geomspace(0.1, 5.0, 8)
    cfg = EcmConfig(max_iter=2000)
    prior1, _ = _run_ecm(n, e, init_params(grid, 1.0e-2), cfg, alpha=0.5)
    prior2, _ = _run_ecm(n, e, init_params(grid[::-1].copy(), 1.0e-2), cfg,
                         alpha=0.5)
    assert prior1.K == prior2.K
    assert_allclose(prior1.log_marginal(n, e).sum(),
                    prior2.log_marginal(n, e).sum(), rtol=1.0e-6)


def test_too_many_components():
    table = ContingencyTable([[5, 3, 10], [4, 6, 11], [20, 30, 500]])
    with pytest.raises(ValueError):
        fit_ecm(table, expected_natural(table),
                EcmConfig(K_init=10, dirichlet_alpha=0.01))


def test_select_alpha():
    table, E = _gamma_table(2.0, 2.0, (10, 10), 10.0, 21)
    cfg = EcmConfig(K_init=10, alpha_candidates=[0.5], seed=4)
    sel = select_alpha(table, E, cfg)
    assert sel["alpha"] == 0.5
    cfg = EcmConfig(K_init=10, alpha_candidates=[0.5, 0.75], seed=4,
                    max_iter=300)
    sel1 = select_alpha(table, E, cfg)
    sel2 = select_alpha(table, E, cfg)
    assert sel1 == sel2
    assert sel1["alpha"] in (0.5, 0.75)
    fit = fit_ecm(table, E, cfg.replace(dirichlet_alpha="auto"))
    assert fit.meta["alpha"] == sel1["alpha"]
    assert fit.meta["alpha_scores"] == sel1["scores"]


def test_general_gamma_answer(answer_store, answer_dir):
    table = load_fixture("statin42")
    E = expected_reference(table)
    fit = fit_ecm(table, E, EcmConfig(dirichlet_alpha=0.5, seed=42))
    fit_answer_testing(fit, "general_gamma_statin42.json", answer_store,
                       answer_dir)


@pytest.mark.slow
def test_general_gamma_statin_counts():
    table = load_fixture("statin46")
    E = expected_reference(table)
    fit = fit_ecm(table, E, EcmConfig(dirichlet_alpha=0.75, seed=20240601))
    res = detect(fit.posterior(table, E), threshold=0.95)
    expected = {"Atorvastatin": 31, "Fluvastatin": 13, "Lovastatin": 10,
                "Pravastatin": 17, "Rosuvastatin": 25, "Simvastatin": 28}
    counts = res.counts_per_drug(table)
    for drug, n in expected.items():
        assert abs(counts[drug] - n) <= 2
