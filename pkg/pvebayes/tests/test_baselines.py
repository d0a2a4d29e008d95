import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pvebayes.baselines import fit_single_gamma, fit_bcpnn, fdr_adjust
from pvebayes.evaluation import detect
from pvebayes.tables import ContingencyTable, load_fixture, \
    expected_natural, expected_reference


def test_single_gamma():
    table = ContingencyTable([[44, 3, 9], [2, 8, 30], [12, 40, 900]])
    E = expected_natural(table)
    fit = fit_single_gamma(table, E, alpha=0.5)
    assert fit.model == "single-gamma"
    assert np.isfinite(fit.loglik)
    post = fit.posterior(table, E)
    assert_allclose(post.mean, (0.5+table.counts)/(0.5+E.values),
                    rtol=1.0e-12)
    with pytest.raises(ValueError):
        fit_single_gamma(table, E, alpha=0.0)


def test_single_gamma_signal_probabilities():
    fit = fit_single_gamma(ContingencyTable([[1, 1], [1, 1]]),
                           np.ones((2, 2)), alpha=0.5)
    post = fit.prior.posterior(np.array([44, 0]), np.array([1.46, 10.0]))
    assert_allclose(post.mean[0], 44.5/1.96, rtol=1.0e-12)
    p = post.prob_signal(0.001)
    assert p[0] > 0.999
    assert p[1] < 1.0e-4


def test_bcpnn_prior_mean():
    prng = np.random.RandomState(99)
    table = ContingencyTable(prng.randint(0, 200, size=(6, 5)))
    stats = fit_bcpnn(table)
    N = table.total
    ni = table.row_totals[:, np.newaxis]
    nj = table.col_totals[np.newaxis, :]
    assert_allclose(1.0/(1.0+stats.beta),
                    (ni+1.0)*(nj+1.0)/(N+2.0)**2, rtol=1.0e-12)
    n = table.counts
    assert_allclose(stats.ic_mean,
                    np.log2((n+1.0)*(N+2.0)**2 /
                            ((N+stats.beta)*(ni+1.0)*(nj+1.0))),
                    rtol=1.0e-10, atol=1.0e-12)
    assert np.all(stats.ic_var > 0.0)
    assert np.all(np.isnan(stats.prob_zero()))
    assert stats.meta["wall_time"] >= 0.0
    assert stats.to_dict()["model"] == "bcpnn"


def test_bcpnn_direction():
    table = ContingencyTable([[400, 10, 100], [10, 400, 100],
                              [100, 100, 5000]])
    stats = fit_bcpnn(table)
    assert stats.ic_mean[0, 0] > 0.0
    assert stats.ic_mean[0, 1] < 0.0
    p = stats.prob_signal()
    assert p[0, 0] > 0.99
    assert p[0, 1] < 0.01


def test_fdr_adjust():
    assert np.all(fdr_adjust(np.zeros(5), level=0.05))
    assert not np.any(fdr_adjust(np.ones(5), level=0.05))
    assert_array_equal(fdr_adjust(np.array([0.01, 0.04, 0.2]), level=0.05),
                       [True, True, False])
    # the selected set grows with the level
    prng = np.random.RandomState(5)
    v = prng.uniform(size=(4, 6))
    prev = 0
    for level in [0.01, 0.05, 0.1, 0.3, 0.5]:
        n = fdr_adjust(v, level=level).sum()
        assert n >= prev
        prev = n
    with pytest.raises(ValueError):
        fdr_adjust(np.array([0.5, 1.5]))


def test_single_gamma_statin():
    table = load_fixture("statin46")
    E = expected_reference(table)
    fit = fit_single_gamma(table, E)
    res = detect(fit.posterior(table, E), fdr_adjust=True)
    counts = res.counts_per_drug(table)
    assert set(counts) == set(table.col_labels[:-1])
    i = table.row_labels.index("Rhabdomyolysis")
    j = table.col_labels.index("Rosuvastatin")
    assert res.flags[i, j]


@pytest.mark.slow
def test_bcpnn_statin_counts():
    table = load_fixture("statin46")
    stats = fit_bcpnn(table)
    res = detect(stats, fdr_adjust=True)
    expected = {"Atorvastatin": 33, "Fluvastatin": 14, "Lovastatin": 12,
                "Pravastatin": 20, "Rosuvastatin": 30, "Simvastatin": 30}
    counts = res.counts_per_drug(table)
    for drug, n in expected.items():
        assert abs(counts[drug] - n) <= 2
