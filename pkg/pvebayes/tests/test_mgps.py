import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pvebayes import mgps
from pvebayes.constants import mgps_default_start
from pvebayes.general_gamma import included_cells
from pvebayes.mgps import ZiComponentSpec, MgpsParams, MgpsConfig, \
    mgps_log_likelihood, mgps_objective, kmeans_1d, init_km1, init_km2, \
    init_mom, estimate_structural_zeros, scaled_factorial_moments, \
    fit_mgps, _km1_from_ratios, _pack
from pvebayes.mixture import GammaMixturePosterior
from pvebayes.tables import ContingencyTable, expected_natural
from pvebayes.utils import DataError
from pvebayes.tests.utils import poisson_table


def _two_gamma_table(seed, size=(30, 30), E=20.0, omega=0.8):
    prng = np.random.RandomState(seed)
    high = prng.uniform(size=size) > omega
    lam = np.where(high, prng.gamma(50.0, 1.0/10.0, size=size),
                   prng.gamma(50.0, 1.0/50.0, size=size))
    return poisson_table(lam, E, prng), np.full(size, E)


def _zero_inflated_null(C, E, zero_frac, prng):
    n = prng.poisson(E, size=C).astype("float64")
    n[:int(round(zero_frac*C))] = 0.0
    return n, np.full(C, E)


def test_component_specs():
    spec = ZiComponentSpec()
    assert spec.alpha_zi == 0.01
    assert spec.beta_zi == 100.0
    with pytest.raises(ValueError):
        ZiComponentSpec(alpha_zi=1.0, beta_zi=1.0)
    with pytest.raises(ValueError):
        MgpsParams(1.0, 1.0, 2.0, 1.0, [0.5, 0.6])
    with pytest.raises(ValueError):
        MgpsParams(1.0, 1.0, 2.0, 1.0, [0.5, 0.5], zi_spec=spec)
    with pytest.raises(ValueError):
        MgpsConfig(max_iter=0)
    p = MgpsParams(2.0, 4.0, 6.0, 2.0, [0.25, 0.75])
    assert_allclose(p.to_prior().mean, 0.25*0.5 + 0.75*3.0)
    assert set(p.to_dict()) == {"alpha1", "beta1", "alpha2", "beta2",
                                "omega"}
    pz = p.with_zi(spec, 0.2)
    assert_allclose(pz.weights, [0.2, 0.6, 0.2])
    assert "omega2" in pz.to_dict()


def test_zero_weight_zi_component():
    table, E = _two_gamma_table(1, size=(10, 10))
    n, e = included_cells(table, E, True)
    p = MgpsParams(2.0, 4.0, 6.0, 2.0, [0.25, 0.75])
    assert_allclose(mgps_log_likelihood(p.with_zi(ZiComponentSpec(), 0.0),
                                        n, e),
                    mgps_log_likelihood(p, n, e), rtol=1.0e-12)


@pytest.mark.parametrize("zi", [False, True])
def test_objective_gradient(zi):
    table, E = _two_gamma_table(2, size=(10, 10))
    n, e = included_cells(table, E, True)
    spec = ZiComponentSpec() if zi else None
    p = MgpsParams(2.0, 4.0, 6.0, 2.0, [0.25, 0.75])
    if zi:
        p = p.with_zi(spec, 0.1)
    theta = _pack(p)
    value, grad = mgps_objective(theta, n, e, spec)
    assert_allclose(-value, mgps_log_likelihood(p, n, e), rtol=1.0e-10)
    h = 1.0e-6
    fd = np.array([(mgps_objective(theta+h*ek, n, e, spec)[0] -
                    mgps_objective(theta-h*ek, n, e, spec)[0])/(2.0*h)
                   for ek in np.eye(theta.size)])
    assert_allclose(grad, fd, rtol=1.0e-5, atol=1.0e-4)


def test_kmeans():
    x = np.array([0.1, 0.2, 0.15, 5.0, 5.5, 4.8])
    assert_array_equal(kmeans_1d(x, [0.0, 1.0]), [0, 0, 0, 1, 1, 1])
    assert kmeans_1d(np.ones(4), [0.0, 2.0]) is None
    with pytest.raises(DataError):
        _km1_from_ratios(np.ones(10))


def test_km1_separated_clusters():
    table, E = _two_gamma_table(3)
    p = init_km1(table, E)
    means = np.sort([p.alpha1/p.beta1, p.alpha2/p.beta2])
    assert_allclose(means, [1.0, 5.0], rtol=0.2)
    # without zeros the KM2 start is the KM1 start
    n, e = included_cells(table, E, True)
    assert np.all(n > 0)
    p2 = init_km2(table, E)
    assert p2.to_dict() == p.to_dict()


def test_structural_zeros():
    prng = np.random.RandomState(10)
    fracs = []
    for _ in range(10):
        n, E = _zero_inflated_null(400, 5.0, 0.25, prng)
        fracs.append(estimate_structural_zeros(n, E)/400)
    assert abs(np.mean(fracs) - 0.25) <= 0.1
    counts = []
    for frac in [0.0, 0.25, 0.5]:
        n, E = _zero_inflated_null(400, 5.0, frac,
                                   np.random.RandomState(3))
        counts.append(estimate_structural_zeros(n, E))
    assert counts[0] <= counts[1] <= counts[2]
    assert estimate_structural_zeros(np.ones(10), np.ones(10)) == 0


def test_method_of_moments():
    small = ContingencyTable([[5, 3, 10], [4, 6, 11], [20, 30, 500]])
    with pytest.raises(DataError):
        init_mom(small, expected_natural(small))
    table, E = _two_gamma_table(4)
    n, e = included_cells(table, E, True)
    target = scaled_factorial_moments(n, e)
    assert target.size == 5
    params, ok = init_mom(table, E)
    assert params.weights.size == 2
    if ok:
        w = params.omega
        m1 = w*params.alpha1/params.beta1 + \
            (1.0-w)*params.alpha2/params.beta2
        assert_allclose(m1, target[0], rtol=1.0e-6)


def test_fit_two_gamma():
    table, E = _two_gamma_table(5)
    n, e = included_cells(table, E, True)
    fit = fit_mgps(table, E)
    assert fit.model == "2-gamma"
    assert fit.loglik >= mgps_log_likelihood(init_km1(table, E), n, e) - 1.0e-9
    assert_allclose(fit.loglik, max(fit.meta["loglik_by_start"].values()))
    assert fit.meta["chosen_start"] in fit.meta["loglik_by_start"]
    assert "default" in fit.meta["loglik_by_start"]
    p = fit.params
    comps = sorted([(p.alpha1/p.beta1, p.weights[0]),
                    (p.alpha2/p.beta2, p.weights[1])])
    assert_allclose(comps[0][0], 1.0, rtol=0.15)
    assert_allclose(comps[1][0], 5.0, rtol=0.15)
    assert abs(comps[1][1] - 0.2) <= 0.07
    with pytest.raises(ValueError):
        fit_mgps(table, E, variant="three_gamma")


def test_fit_two_gamma_zi():
    prng = np.random.RandomState(6)
    size = (30, 30)
    lam = np.where(prng.uniform(size=size) < 0.5, 0.0,
                   prng.gamma(20.0, 1.0/20.0, size=size))
    lam[:, -1] = 1.0
    lam[-1, :] = 1.0
    table = poisson_table(lam, 20.0, prng)
    E = np.full(size, 20.0)
    fit = fit_mgps(table, E, variant="two_gamma_zi")
    assert fit.model == "2-gamma-zi"
    assert fit.prior.K == 3
    assert_allclose(fit.prior.shapes[2], 0.01)
    assert_allclose(fit.prior.rates[2], 100.0)
    prior = fit.prior
    mass_near_zero = GammaMixturePosterior(prior.weights, prior.shapes,
                                           prior.rates).cdf(0.05)
    n, e = included_cells(table, E, True)
    assert abs(mass_near_zero - np.mean(n == 0)) <= 0.1


def test_nan_start_loglik_is_not_chosen(monkeypatch):
    a1, b1, a2, b2, omega = mgps_default_start
    default = _pack(MgpsParams(a1, b1, a2, b2, [omega, 1.0-omega]))
    seen = []

    def _objective(theta, *args):
        # the first evaluation at the default start is not finite
        if not seen and np.array_equal(theta, default):
            seen.append(True)
            return np.nan, np.zeros_like(theta)
        return mgps_objective(theta, *args)

    monkeypatch.setattr(mgps, "mgps_objective", _objective)
    table, E = _two_gamma_table(5)
    fit = fit_mgps(table, E)
    assert seen
    assert np.isfinite(fit.loglik)
    assert np.all(np.isfinite(list(fit.meta["loglik_by_start"].values())))
    assert_allclose(fit.loglik, max(fit.meta["loglik_by_start"].values()))
