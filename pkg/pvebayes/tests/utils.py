import os
import numpy as np
from numpy.testing import assert_allclose
from scipy.integrate import quad
from scipy.stats import gamma, poisson

from pvebayes.mixture import PriorFit
from pvebayes.tables import ContingencyTable


def poisson_table(lam, E, prng):
    """
    A table of Poisson(E*lam) counts. Empty rows or columns get a
    single report in their reference cell.
    """
    counts = prng.poisson(np.asarray(lam)*np.asarray(E))
    counts[:, -1] += counts.sum(axis=1) == 0
    counts[-1, :] += counts.sum(axis=0) == 0
    return ContingencyTable(counts)


def gamma_mixture_pdf(x, weights, shapes, rates):
    return sum(w*gamma.pdf(x, a, scale=1.0/b)
               for w, a, b in zip(weights, shapes, rates))


def nb_marginal_quad(n, shape, rate, E):
    def f(x):
        return gamma.pdf(x, shape, scale=1.0/rate)*poisson.pmf(n, E*x)
    mode = max(n/E, shape/rate)
    opts = {"epsabs": 0.0, "epsrel": 1.0e-12, "limit": 200}
    return quad(f, 0.0, mode, **opts)[0] + quad(f, mode, np.inf, **opts)[0]


def posterior_mean_quad(n, E, weights, shapes, rates):
    def like(x):
        return gamma_mixture_pdf(x, weights, shapes, rates) * \
            poisson.pmf(n, E*x)
    split = max(n/E, 1.0)
    opts = {"epsabs": 0.0, "epsrel": 1.0e-12, "limit": 200}
    num = quad(lambda x: x*like(x), 0.0, split, **opts)[0] + \
        quad(lambda x: x*like(x), split, np.inf, **opts)[0]
    den = quad(like, 0.0, split, **opts)[0] + \
        quad(like, split, np.inf, **opts)[0]
    return num/den


def scaled_w1_quad(weights, shapes, rates, t):
    def f(x):
        return abs(x-t)*gamma_mixture_pdf(x, weights, shapes, rates)
    mean = np.sum(np.asarray(weights)*np.asarray(shapes)/np.asarray(rates))
    pts = sorted({t, mean})
    opts = {"epsabs": 0.0, "epsrel": 1.0e-12, "limit": 200}
    total = quad(f, 0.0, pts[0], **opts)[0]
    for a, b in zip(pts[:-1], pts[1:]):
        total += quad(f, a, b, **opts)[0]
    total += quad(f, pts[-1], np.inf, **opts)[0]
    return total/t


def projected_gradient_npmle(P, steps=500, step_size=1.0e-3):
    """
    Plain projected-gradient ascent on the NPMLE objective, used as an
    independent lower bound for the optimum.
    """
    from pvebayes.km import unit_simplex_projection
    g = np.full(P.shape[1], 1.0/P.shape[1])
    best = np.sum(np.log(P @ g))
    for _ in range(steps):
        grad = P.T @ (1.0/(P @ g))
        g = unit_simplex_projection(g + step_size*grad/P.shape[0])
        val = np.sum(np.log(np.maximum(P @ g, 1.0e-300)))
        best = max(best, val)
    return best


def fit_answer_testing(fit, filename, answer_store, answer_dir):
    testfile = os.path.join(answer_dir, filename)
    if answer_store:
        fit.write_json(testfile, overwrite=True)
    else:
        answer_fit = PriorFit.from_file(testfile)
        assert answer_fit.model == fit.model
        assert_allclose(answer_fit.loglik, fit.loglik, rtol=1.0e-8)
        assert_allclose(answer_fit.prior.mean, fit.prior.mean, rtol=1.0e-6)
