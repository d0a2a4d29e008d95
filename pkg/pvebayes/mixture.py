"""
Gamma and negative-binomial densities, gamma-mixture and discrete
priors over signal strengths, and the conjugate per-cell posteriors
they induce.
"""
import json
import numpy as np
from scipy.special import gammaln, gammainc, gammaincc, \
    gammaincinv, logsumexp, xlogy
from astropy.table import Table

from pvebayes.utils import NumericalError, DataError, \
    resolve_option, check_file_location


def nb_log_pmf(n, alpha, beta, E):
    """
    Log-probability of the count *n* under the gamma-Poisson
    (negative binomial) marginal, i.e. n ~ Poisson(E*lam) with
    lam ~ Gamma(alpha, rate=beta). The marginal mean is
    alpha*E/beta. All arguments broadcast against each other.

    Parameters
    ----------
    n : integer or array-like
        The observed count(s), n >= 0.
    alpha : float or array-like
        The gamma shape(s).
    beta : float or array-like
        The gamma rate(s).
    E : float or array-like
        The expected count(s) under the null, E >= 0.
    """
    n = np.asarray(n, dtype="float64")
    alpha = np.asarray(alpha, dtype="float64")
    beta = np.asarray(beta, dtype="float64")
    E = np.asarray(E, dtype="float64")
    for name, arr in [("alpha", alpha), ("beta", beta), ("E", E)]:
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"Non-finite {name} in nb_log_pmf!")
    if np.any(n < 0):
        raise ValueError("Counts must be non-negative!")
    return gammaln(n+alpha) - gammaln(alpha) - gammaln(n+1.0) - \
        alpha*np.log1p(E/beta) + xlogy(n, E/(beta+E))


def poisson_log_pmf(n, mu):
    n = np.asarray(n, dtype="float64")
    return xlogy(n, mu) - mu - gammaln(n+1.0)


def _safe_log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _check_simplex(w, what):
    if np.any(w < 0.0) or np.abs(w.sum(axis=-1)-1.0).max() > 1.0e-10:
        raise DataError(f"The {what} must be non-negative and sum to 1!")


def _normalize_log_weights(logw, what):
    lse = logsumexp(logw, axis=-1, keepdims=True)
    if not np.all(np.isfinite(lse)):
        raise NumericalError(f"All {what} underflowed to zero; the prior "
                             f"cannot explain at least one cell.")
    return np.exp(logw - lse)


class GammaMixturePrior:
    """
    A finite mixture of gamma distributions over the signal
    strength lambda.

    Parameters
    ----------
    weights : array-like
        The K mixing weights, summing to 1.
    shapes : array-like
        The K gamma shapes r_k.
    scales : array-like
        The K gamma scales h_k (rate = 1/h_k).
    """
    def __init__(self, weights, shapes, scales):
        weights = np.atleast_1d(np.asarray(weights, dtype="float64"))
        shapes = np.atleast_1d(np.asarray(shapes, dtype="float64"))
        scales = np.atleast_1d(np.asarray(scales, dtype="float64"))
        if not (weights.shape == shapes.shape == scales.shape) or \
                weights.ndim != 1 or weights.size < 1:
            raise DataError("weights, shapes, and scales must be "
                            "1-D arrays of the same length!")
        _check_simplex(weights, "mixture weights")
        if np.any(shapes <= 0.0) or np.any(scales <= 0.0):
            raise DataError("Gamma shapes and scales must be positive!")
        self.weights = weights
        self.shapes = shapes
        self.scales = scales

    def __repr__(self):
        return f"GammaMixturePrior(K={self.K})"

    @property
    def K(self):
        return self.weights.size

    @property
    def rates(self):
        return 1.0/self.scales

    @property
    def mean(self):
        return float(np.sum(self.weights*self.shapes*self.scales))

    @property
    def variance(self):
        m2 = self.shapes*(self.shapes+1.0)*self.scales**2
        return float(np.sum(self.weights*m2) - self.mean**2)

    @classmethod
    def from_rates(cls, weights, shapes, rates):
        return cls(weights, shapes, 1.0/np.asarray(rates, dtype="float64"))

    def component_log_marginals(self, n, E):
        """
        log(w_k) + log f_NB(n | r_k, 1/h_k, E) for every cell and
        component, as an array with a trailing axis of length K.
        """
        n = np.asarray(n, dtype="float64")[..., np.newaxis]
        E = np.asarray(E, dtype="float64")[..., np.newaxis]
        return _safe_log(self.weights) + \
            nb_log_pmf(n, self.shapes, self.rates, E)

    def log_marginal(self, n, E):
        """
        Log marginal probability of the count(s) *n* with
        null expected count(s) *E*.
        """
        return logsumexp(self.component_log_marginals(n, E), axis=-1)

    def pdf(self, x):
        post = GammaMixturePosterior(self.weights, self.shapes, self.rates)
        return post.pdf(x)

    def posterior(self, n, E):
        return posterior_gamma_mixture(self, n, E)

    def to_dict(self):
        return {"components": [{"weight": float(w), "shape": float(r),
                                "scale": float(h)} for w, r, h in
                               zip(self.weights, self.shapes, self.scales)]}

    @classmethod
    def from_dict(cls, d):
        comps = d["components"]
        return cls([c["weight"] for c in comps],
                   [c["shape"] for c in comps],
                   [c["scale"] for c in comps])


class DiscretePrior:
    """
    A discrete prior over the signal strength lambda with
    probability masses on a fixed grid of support points.

    Parameters
    ----------
    support : array-like
        The K strictly increasing, positive support points.
    masses : array-like
        The K probability masses, summing to 1.
    """
    def __init__(self, support, masses):
        support = np.atleast_1d(np.asarray(support, dtype="float64"))
        masses = np.atleast_1d(np.asarray(masses, dtype="float64"))
        if support.shape != masses.shape or support.ndim != 1:
            raise DataError("support and masses must be 1-D arrays of "
                            "the same length!")
        if np.any(support <= 0.0) or np.any(np.diff(support) <= 0.0):
            raise DataError("The support must be positive and "
                            "strictly increasing!")
        _check_simplex(masses, "prior masses")
        self.support = support
        self.masses = masses

    def __repr__(self):
        return f"DiscretePrior(K={self.K})"

    @property
    def K(self):
        return self.support.size

    @property
    def mean(self):
        return float(self.masses @ self.support)

    @property
    def variance(self):
        return float(self.masses @ self.support**2 - self.mean**2)

    def log_likelihood_matrix(self, n, E):
        """
        log Poisson(n | v_k E) for every cell and support point,
        with a trailing axis of length K.
        """
        n = np.asarray(n, dtype="float64")[..., np.newaxis]
        E = np.asarray(E, dtype="float64")[..., np.newaxis]
        return poisson_log_pmf(n, self.support*E)

    def log_marginal(self, n, E):
        return logsumexp(_safe_log(self.masses) +
                         self.log_likelihood_matrix(n, E), axis=-1)

    def posterior(self, n, E):
        return posterior_discrete(self, n, E)

    def to_dict(self):
        return {"support": self.support.tolist(),
                "masses": self.masses.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["support"], d["masses"])


class GammaMixturePosterior:
    """
    Gamma-mixture posteriors for one or many cells. The last axis of
    each array runs over the mixture components; the leading axes
    run over cells.

    Parameters
    ----------
    weights : array-like
        The posterior component weights.
    shapes : array-like
        The posterior component shapes.
    rates : array-like
        The posterior component rates.
    """
    def __init__(self, weights, shapes, rates):
        self.weights, self.shapes, self.rates = \
            np.broadcast_arrays(np.asarray(weights, dtype="float64"),
                                np.asarray(shapes, dtype="float64"),
                                np.asarray(rates, dtype="float64"))

    def __repr__(self):
        return f"GammaMixturePosterior(shape={self.shape}, " \
               f"K={self.weights.shape[-1]})"

    @property
    def shape(self):
        return self.weights.shape[:-1]

    def __getitem__(self, item):
        if not isinstance(item, tuple):
            item = (item,)
        item = item + (Ellipsis,)
        return GammaMixturePosterior(self.weights[item], self.shapes[item],
                                     self.rates[item])

    @property
    def mean(self):
        return np.sum(self.weights*self.shapes/self.rates, axis=-1)

    @property
    def second_moment(self):
        return np.sum(self.weights*self.shapes*(self.shapes+1.0) /
                      self.rates**2, axis=-1)

    @property
    def variance(self):
        # law of total variance
        m = self.shapes/self.rates
        within = np.sum(self.weights*self.shapes/self.rates**2, axis=-1)
        mean = np.asarray(self.mean)[..., np.newaxis]
        between = np.sum(self.weights*(m-mean)**2, axis=-1)
        return within + between

    def _expand(self, x):
        x = np.asarray(x, dtype="float64")
        return np.broadcast_to(x, np.broadcast_shapes(x.shape, self.shape))

    def cdf(self, x):
        x = self._expand(x)[..., np.newaxis]
        return np.sum(self.weights*gammainc(self.shapes, self.rates*x),
                      axis=-1)

    def sf(self, x):
        x = self._expand(x)[..., np.newaxis]
        return np.sum(self.weights*gammaincc(self.shapes, self.rates*x),
                      axis=-1)

    def logpdf(self, x):
        """
        Log-density at *x*. *x* may carry one extra trailing axis of
        evaluation points, in which case the result has that axis too.
        """
        x = np.asarray(x, dtype="float64")
        w = self.weights[..., np.newaxis, :]
        a = self.shapes[..., np.newaxis, :]
        b = self.rates[..., np.newaxis, :]
        xx = x[..., np.newaxis]
        with np.errstate(divide="ignore", invalid="ignore"):
            logc = _safe_log(w) + xlogy(a, b) - gammaln(a) + \
                xlogy(a-1.0, xx) - b*xx
        logc = np.where(xx > 0.0, logc, -np.inf)
        return logsumexp(logc, axis=-1)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def quantile(self, q):
        """
        The *q*-th quantile of every posterior, found by bisection
        between the smallest and the largest component quantiles.
        """
        if not 0.0 < q < 1.0:
            raise ValueError("The quantile level must lie in (0, 1)!")
        comp_q = gammaincinv(self.shapes, q)/self.rates
        active = self.weights > 0.0
        lo = np.min(np.where(active, comp_q, np.inf), axis=-1)
        hi = np.max(np.where(active, comp_q, -np.inf), axis=-1)
        for _ in range(200):
            mid = 0.5*(lo+hi)
            below = self.cdf(mid) < q
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi-lo <= 1.0e-14*np.maximum(hi, 1.0e-300)):
                break
        return 0.5*(lo+hi)

    def prob_signal(self, epsilon=None):
        """
        Posterior probability that lambda >= 1 + epsilon.
        """
        epsilon = resolve_option(epsilon, "signal_epsilon")
        return self.sf(1.0+epsilon)

    def prob_zero(self, zeta=None):
        """
        Posterior probability that lambda <= zeta.
        """
        zeta = resolve_option(zeta, "zero_threshold")
        return self.cdf(zeta)


class DiscretePosterior:
    """
    Discrete posteriors for one or many cells on a shared support.

    Parameters
    ----------
    support : array-like
        The K support points.
    masses : array-like
        The posterior masses, with a trailing axis of length K.
    """
    def __init__(self, support, masses):
        self.support = np.asarray(support, dtype="float64")
        self.masses = np.asarray(masses, dtype="float64")

    def __repr__(self):
        return f"DiscretePosterior(shape={self.shape}, K={self.support.size})"

    @property
    def shape(self):
        return self.masses.shape[:-1]

    def __getitem__(self, item):
        if not isinstance(item, tuple):
            item = (item,)
        return DiscretePosterior(self.support, self.masses[item + (Ellipsis,)])

    @property
    def mean(self):
        return self.masses @ self.support

    @property
    def second_moment(self):
        return self.masses @ self.support**2

    @property
    def variance(self):
        dev = self.support - np.asarray(self.mean)[..., np.newaxis]
        return np.sum(self.masses*dev**2, axis=-1)

    def cdf(self, x):
        x = np.asarray(x, dtype="float64")[..., np.newaxis]
        return np.sum(self.masses*(self.support <= x), axis=-1)

    def sf(self, x):
        x = np.asarray(x, dtype="float64")[..., np.newaxis]
        return np.sum(self.masses*(self.support >= x), axis=-1)

    def quantile(self, q):
        """
        The generalized inverse of the posterior CDF: the smallest
        support point whose cumulative mass reaches *q*.
        """
        if not 0.0 < q < 1.0:
            raise ValueError("The quantile level must lie in (0, 1)!")
        cum = np.cumsum(self.masses, axis=-1)
        idx = np.argmax(cum >= q-1.0e-12, axis=-1)
        return self.support[idx]

    def density(self, edges):
        """
        Posterior mass per unit length in the bins defined by *edges*.
        """
        edges = np.asarray(edges, dtype="float64")
        which = np.digitize(self.support, edges) - 1
        nbins = edges.size - 1
        out = np.zeros(self.shape + (nbins,))
        for k in range(nbins):
            out[..., k] = self.masses[..., which == k].sum(axis=-1)
        return out/np.diff(edges)

    def prob_signal(self, epsilon=None):
        epsilon = resolve_option(epsilon, "signal_epsilon")
        return self.sf(1.0+epsilon)

    def prob_zero(self, zeta=None):
        zeta = resolve_option(zeta, "zero_threshold")
        return self.cdf(zeta)


def posterior_gamma_mixture(prior, n, E):
    """
    Conjugate posterior of lambda given count(s) *n* and null
    expected count(s) *E* under a gamma-mixture prior.

    Parameters
    ----------
    prior : :class:`~pvebayes.mixture.GammaMixturePrior`
        The prior.
    n : integer or array-like
        The observed count(s).
    E : float or array-like
        The null expected count(s).

    Returns
    -------
    A :class:`~pvebayes.mixture.GammaMixturePosterior` whose leading
    shape is the broadcast shape of *n* and *E*.
    """
    n, E = np.broadcast_arrays(np.asarray(n, dtype="float64"),
                               np.asarray(E, dtype="float64"))
    logw = prior.component_log_marginals(n, E)
    weights = _normalize_log_weights(logw, "posterior component weights")
    shapes = prior.shapes + n[..., np.newaxis]
    rates = prior.rates + E[..., np.newaxis]
    return GammaMixturePosterior(weights, shapes, rates)


def posterior_discrete(prior, n, E):
    """
    Posterior of lambda given count(s) *n* and null expected
    count(s) *E* under a discrete prior. The support is unchanged.

    Parameters
    ----------
    prior : :class:`~pvebayes.mixture.DiscretePrior`
        The prior.
    n : integer or array-like
        The observed count(s).
    E : float or array-like
        The null expected count(s).
    """
    n, E = np.broadcast_arrays(np.asarray(n, dtype="float64"),
                               np.asarray(E, dtype="float64"))
    logm = _safe_log(prior.masses) + prior.log_likelihood_matrix(n, E)
    masses = _normalize_log_weights(logm, "posterior masses")
    return DiscretePosterior(prior.support, masses)


def prob_signal(post, epsilon=None):
    """
    Posterior probability that lambda >= 1 + epsilon.

    Parameters
    ----------
    post : posterior object
        A gamma-mixture or discrete posterior.
    epsilon : float, optional
        The signal margin. Default: the "signal_epsilon"
        configuration value (0.001).
    """
    return post.prob_signal(epsilon)


def posterior_quantile(post, q):
    """
    The *q*-th quantile of a gamma-mixture or discrete posterior.
    """
    return post.quantile(q)


def posterior_density(post, x):
    """
    Plot-ready posterior densities. For gamma-mixture posteriors
    the density is evaluated at the points *x*; for discrete
    posteriors *x* are bin edges and the result is the mass per
    unit length in each bin.
    """
    x = np.asarray(x, dtype="float64")
    if isinstance(post, GammaMixturePosterior):
        xx = np.broadcast_to(x, post.shape + x.shape)
        return post.pdf(xx)
    return post.density(x)


def summarize_posterior(post, epsilon=None, zeta=None):
    """
    The standard per-cell summaries of a posterior: mean, variance,
    median, 5th and 95th percentiles, signal and zero probabilities.
    """
    return {"mean": post.mean,
            "variance": post.variance,
            "median": post.quantile(0.5),
            "q05": post.quantile(0.05),
            "q95": post.quantile(0.95),
            "prob_signal": post.prob_signal(epsilon),
            "prob_zero": post.prob_zero(zeta)}


def prior_from_dict(d):
    if "components" in d:
        return GammaMixturePrior.from_dict(d)
    return DiscretePrior.from_dict(d)


class PriorFit:
    """
    A fitted prior together with its log marginal likelihood
    and model-specific metadata.

    Parameters
    ----------
    model : string
        The model name, e.g. "general-gamma" or "km".
    prior : prior object
        A :class:`~pvebayes.mixture.GammaMixturePrior` or
        :class:`~pvebayes.mixture.DiscretePrior`.
    loglik : float
        The log marginal likelihood at the fitted prior.
    meta : dict, optional
        Extra fit information, written to JSON with the prior.
    """
    def __init__(self, model, prior, loglik, meta=None):
        self.model = model
        self.prior = prior
        self.loglik = float(loglik)
        if meta is None:
            meta = {}
        self.meta = meta

    def __repr__(self):
        return f"PriorFit(model='{self.model}', {self.prior!r}, " \
               f"loglik={self.loglik:.6g})"

    def posterior(self, table, E):
        """
        Posteriors for every cell of *table* (reference cells
        included) given the expected counts *E*.
        """
        return self.prior.posterior(table.counts, np.asarray(E))

    def posterior_table(self, table, E, epsilon=None, zeta=None):
        """
        One row per cell with the count, the expected count and the
        posterior summaries. Reference cells are flagged.
        """
        post = self.posterior(table, E)
        return posterior_summary_table(table, E, post, epsilon=epsilon,
                                       zeta=zeta)

    def to_dict(self):
        d = {"model": self.model}
        d.update(self.meta)
        d.update(self.prior.to_dict())
        d["loglik"] = self.loglik
        return d

    def write_json(self, filename, overwrite=False):
        """
        Write the fit to a JSON file.

        Parameters
        ----------
        filename : string
            The filename to write the fit to.
        overwrite : boolean, optional
            Whether or not to overwrite an existing
            file with the same name. Default: False
        """
        check_file_location(filename, overwrite)
        with open(filename, "w") as f:
            json.dump(self.to_dict(), f, indent=4)

    @classmethod
    def from_file(cls, filename):
        with open(filename, "r") as f:
            d = json.load(f)
        prior = prior_from_dict(d)
        meta = {k: v for k, v in d.items()
                if k not in ["model", "loglik", "components",
                             "support", "masses"]}
        return cls(d["model"], prior, d["loglik"], meta=meta)


def posterior_summary_table(table, E, post, epsilon=None, zeta=None):
    epsilon = resolve_option(epsilon, "signal_epsilon")
    zeta = resolve_option(zeta, "zero_threshold")
    summ = summarize_posterior(post, epsilon=epsilon, zeta=zeta)
    I, J = table.shape
    t = Table()
    t["AE"] = np.repeat(table.row_labels, J)
    t["drug"] = np.tile(table.col_labels, I)
    t["N"] = table.counts.ravel()
    t["E"] = np.asarray(E, dtype="float64").ravel()
    t["reference"] = ~table.non_reference_mask.ravel()
    for key in ["mean", "median", "q05", "q95", "prob_signal", "prob_zero"]:
        t[key] = np.asarray(summ[key], dtype="float64").ravel()
    t.meta["epsilon"] = epsilon
    t.meta["zeta"] = zeta
    return t
