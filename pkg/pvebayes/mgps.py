"""
Two-component gamma mixture priors (the gamma-Poisson shrinker) and
their zero-inflated variant, fitted by marginal maximum likelihood
from several starting points.
"""
import time
import numpy as np
from scipy.optimize import minimize, root
from scipy.special import digamma, logsumexp, softmax, gammaln

from pvebayes.constants import zi_alpha, zi_beta, mgps_default_start, \
    min_gamma_shape, min_gamma_var
from pvebayes.general_gamma import included_cells
from pvebayes.mixture import GammaMixturePrior, PriorFit, nb_log_pmf
from pvebayes.utils import mylog, DataError, NumericalError

variants = {"two_gamma": "2-gamma", "two_gamma_zi": "2-gamma-zi"}


class MgpsConfig:
    """
    Settings of the 2-gamma fits.

    Parameters
    ----------
    max_iter : integer, optional
        The maximum number of L-BFGS-B iterations per start.
        Default: 2000
    exclude_reference_cells : boolean, optional
        Whether to leave the reference row and column out of the
        likelihood. Default: True
    """
    def __init__(self, max_iter=2000, exclude_reference_cells=True):
        if max_iter < 1:
            raise ValueError("max_iter must be at least 1!")
        self.max_iter = int(max_iter)
        self.exclude_reference_cells = exclude_reference_cells

    def to_dict(self):
        return dict(self.__dict__)


class ZiComponentSpec:
    """
    The fixed near-zero gamma component of the zero-inflated model.

    Parameters
    ----------
    alpha_zi : float, optional
        The shape. Default: 0.01
    beta_zi : float, optional
        The rate. Default: 100.0
    """
    def __init__(self, alpha_zi=zi_alpha, beta_zi=zi_beta):
        if alpha_zi <= 0.0 or beta_zi <= 0.0:
            raise ValueError("alpha_zi and beta_zi must be positive!")
        if alpha_zi/beta_zi > 1.0e-3 or alpha_zi/beta_zi**2 > 1.0e-4:
            raise ValueError("The zero-inflation component must have "
                             "mean <= 1e-3 and variance <= 1e-4!")
        self.alpha_zi = float(alpha_zi)
        self.beta_zi = float(beta_zi)

    def to_dict(self):
        return {"alpha_zi": self.alpha_zi, "beta_zi": self.beta_zi}


class MgpsParams:
    """
    Parameters of a two-component gamma mixture prior, optionally
    with a fixed zero-inflation component. Gammas use the rate
    convention: Gamma(alpha, beta) has mean alpha/beta.

    Parameters
    ----------
    alpha1, beta1, alpha2, beta2 : floats
        Shapes and rates of the two free components.
    weights : array-like
        The component weights: (omega, 1-omega) for the 2-gamma
        model, (omega1, omega2, omega_zi) with a zero-inflation
        component.
    zi_spec : :class:`~pvebayes.mgps.ZiComponentSpec`, optional
        The zero-inflation component, if any.
    """
    def __init__(self, alpha1, beta1, alpha2, beta2, weights, zi_spec=None):
        weights = np.asarray(weights, dtype="float64")
        expected = 2 if zi_spec is None else 3
        if weights.size != expected:
            raise ValueError(f"Expected {expected} weights, "
                             f"got {weights.size}!")
        if min(alpha1, beta1, alpha2, beta2) <= 0.0:
            raise ValueError("Gamma shapes and rates must be positive!")
        if np.any(weights < 0.0) or abs(weights.sum()-1.0) > 1.0e-10:
            raise ValueError("The weights must lie on the simplex!")
        self.alpha1 = float(alpha1)
        self.beta1 = float(beta1)
        self.alpha2 = float(alpha2)
        self.beta2 = float(beta2)
        self.weights = weights
        self.zi_spec = zi_spec

    def __repr__(self):
        return f"MgpsParams(alpha1={self.alpha1:.4g}, " \
               f"beta1={self.beta1:.4g}, " \
               f"alpha2={self.alpha2:.4g}, beta2={self.beta2:.4g}, " \
               f"weights={np.round(self.weights, 4).tolist()})"

    @property
    def omega(self):
        return float(self.weights[0])

    @property
    def shapes(self):
        s = [self.alpha1, self.alpha2]
        if self.zi_spec is not None:
            s.append(self.zi_spec.alpha_zi)
        return np.array(s)

    @property
    def rates(self):
        b = [self.beta1, self.beta2]
        if self.zi_spec is not None:
            b.append(self.zi_spec.beta_zi)
        return np.array(b)

    def to_prior(self):
        return GammaMixturePrior.from_rates(self.weights, self.shapes,
                                           self.rates)

    def with_zi(self, zi_spec, zi_weight):
        w = np.append(self.weights[:2]*(1.0-zi_weight), zi_weight)
        return MgpsParams(self.alpha1, self.beta1, self.alpha2, self.beta2,
                          w, zi_spec=zi_spec)

    def to_dict(self):
        d = {"alpha1": self.alpha1, "beta1": self.beta1,
             "alpha2": self.alpha2, "beta2": self.beta2}
        if self.zi_spec is None:
            d["omega"] = self.omega
        else:
            d["omega1"] = float(self.weights[0])
            d["omega2"] = float(self.weights[1])
            d.update(self.zi_spec.to_dict())
        return d


def mgps_log_likelihood(params, n, E):
    """
    The marginal log-likelihood of the counts *n* with null
    expected counts *E* under the prior *params*.
    """
    return float(params.to_prior().log_marginal(n, E).sum())


def _gamma_from_moments(mean, var):
    mean = max(mean, 1.0e-6)
    var = max(var, min_gamma_var)
    alpha = max(mean*mean/var, min_gamma_shape)
    return alpha, alpha/mean


def kmeans_1d(x, centers, max_sweeps=500):
    """
    Lloyd's algorithm for two clusters on 1-D data. Returns the
    labels (0 for the lower center) or None if a cluster empties.
    """
    c = np.sort(np.asarray(centers, dtype="float64"))
    labels = None
    for _ in range(max_sweeps):
        new = (np.abs(x-c[1]) < np.abs(x-c[0])).astype("int64")
        if np.all(new == new[0]):
            return None
        if labels is not None and np.all(new == labels):
            break
        labels = new
        c = np.array([x[labels == 0].mean(), x[labels == 1].mean()])
    return labels


def _km1_from_ratios(lam):
    if np.unique(lam).size < 2:
        raise DataError("The k-means initialization needs at least two "
                        "distinct O/E ratios!")
    labels = kmeans_1d(lam, [lam.min(), lam.max()])
    if labels is None:
        labels = kmeans_1d(lam, np.quantile(lam, [0.25, 0.75]))
    if labels is None:
        raise DataError("The k-means initialization produced an "
                        "empty cluster!")
    parts = [lam[labels == 0], lam[labels == 1]]
    a1, b1 = _gamma_from_moments(parts[0].mean(), parts[0].var())
    a2, b2 = _gamma_from_moments(parts[1].mean(), parts[1].var())
    omega = parts[0].size/lam.size
    return MgpsParams(a1, b1, a2, b2, [omega, 1.0-omega])


def init_km1(table, E, exclude_reference=True):
    """
    Starting values from two-cluster k-means on the O/E ratios,
    with the cluster means and variances matched to gamma moments.

    Parameters
    ----------
    table : :class:`~pvebayes.tables.ContingencyTable`
        The report counts.
    E : array-like or :class:`~pvebayes.tables.ExpectedCounts`
        The null expected counts.
    exclude_reference : boolean, optional
        Whether to leave the reference row and column out.
        Default: True
    """
    n, e = included_cells(table, E, exclude_reference)
    return _km1_from_ratios(n/e)


def estimate_structural_zeros(n, E):
    """
    The number of structural zeros that maximizes the zero-inflated
    Poisson likelihood of the counts under the null lambda = 1.
    """
    zero = n == 0
    Z = int(zero.sum())
    if Z == 0:
        return 0
    C = n.size
    n0 = np.arange(Z+1)
    pi = n0/C
    with np.errstate(divide="ignore"):
        ll_zero = np.log(pi[:, np.newaxis] +
                         (1.0-pi[:, np.newaxis])*np.exp(-E[zero])).sum(axis=1)
        ll_pos = (C-Z)*np.log1p(-pi)
    return int(n0[np.argmax(ll_zero+ll_pos)])


def _km2_from_cells(n, e):
    n0 = estimate_structural_zeros(n, e)
    if n0 == 0:
        return _km1_from_ratios(n/e), 0
    zeros = np.nonzero(n == 0)[0]
    drop = zeros[np.argsort(e[zeros], kind="stable")[:n0]]
    keep = np.ones(n.size, dtype="bool")
    keep[drop] = False
    mylog.debug(f"KM2 initialization removes {n0} structural zeros.")
    return _km1_from_ratios(n[keep]/e[keep]), n0


def init_km2(table, E, exclude_reference=True):
    """
    Like :func:`~pvebayes.mgps.init_km1`, after removing the number
    of zero cells that a zero-inflated Poisson profile likelihood
    attributes to structural zeros.
    """
    n, e = included_cells(table, E, exclude_reference)
    return _km2_from_cells(n, e)[0]


def scaled_factorial_moments(n, E, max_order=5):
    """
    Means of (N)_m / E^m over the cells with N >= m, for
    m = 1, ..., max_order.
    """
    out = np.empty(max_order)
    for m in range(1, max_order+1):
        use = n >= m
        if not np.any(use):
            raise DataError(f"No cell has a count of at least {m}!")
        nn = n[use]
        logfact = gammaln(nn+1.0) - gammaln(nn-m+1.0)
        out[m-1] = np.mean(np.exp(logfact - m*np.log(E[use])))
    return out


def _model_moments(x, max_order=5):
    a1, s1, a2, s2 = np.exp(x[:4])
    w = 1.0/(1.0+np.exp(-x[4]))
    out = np.empty(max_order)
    p1 = p2 = 1.0
    for m in range(1, max_order+1):
        p1 *= s1*(a1+m-1)
        p2 *= s2*(a2+m-1)
        out[m-1] = w*p1 + (1.0-w)*p2
    return out


def init_mom(table, E, exclude_reference=True, max_steps=200):
    """
    Starting values from the first five scaled factorial moments,
    solved from the k-means starting point. The second gamma
    parameter is treated as a scale in the moment equations.

    Returns
    -------
    The parameters and whether the solver converged.
    """
    n, e = included_cells(table, E, exclude_reference)
    return _mom_from_cells(n, e, max_steps=max_steps)


def _mom_from_cells(n, e, max_steps=200):
    if np.sum(n >= 5) < 10:
        raise DataError("The method of moments needs at least 10 cells "
                        "with a count of 5 or more!")
    target = scaled_factorial_moments(n, e)
    start = _km1_from_ratios(n/e)
    w0 = np.clip(start.omega, 1.0e-6, 1.0-1.0e-6)
    x0 = np.array([np.log(start.alpha1), -np.log(start.beta1),
                   np.log(start.alpha2), -np.log(start.beta2),
                   np.log(w0/(1.0-w0))])

    def _resid(x):
        with np.errstate(over="ignore", invalid="ignore"):
            return _model_moments(x)/target - 1.0

    sol = root(_resid, x0, method="hybr", options={"maxfev": max_steps*6})
    success = bool(sol.success) and np.all(np.isfinite(sol.x))
    x = sol.x if success else x0
    a1, s1, a2, s2 = np.exp(x[:4])
    w = 1.0/(1.0+np.exp(-x[4]))
    params = MgpsParams(a1, 1.0/s1, a2, 1.0/s2, [w, 1.0-w])
    if not success:
        mylog.debug(f"The moment equations did not converge: {sol.message}")
    return params, success


def _pack(params):
    w = np.clip(params.weights, 1.0e-12, None)
    logits = np.log(w[:-1]) - np.log(w[-1])
    theta = np.concatenate([np.log([params.alpha1, params.beta1,
                                    params.alpha2, params.beta2]), logits])
    return np.clip(theta, -_bound(theta.size)[:, 1], _bound(theta.size)[:, 1])


def _bound(size):
    b = np.full((size, 2), 20.0)
    b[4:] = 30.0
    b[:, 0] *= -1.0
    return b


def _unpack(theta, zi_spec):
    a = np.exp(theta[0:4:2])
    b = np.exp(theta[1:4:2])
    w = softmax(np.append(theta[4:], 0.0))
    return MgpsParams(a[0], b[0], a[1], b[1], w, zi_spec=zi_spec)


def mgps_objective(theta, n, E, zi_spec=None):
    """
    The negative marginal log-likelihood in the unconstrained
    parametrization (log shapes, log rates, weight logits) and
    its gradient.
    """
    a = np.exp(theta[0:4:2])
    b = np.exp(theta[1:4:2])
    w = softmax(np.append(theta[4:], 0.0))
    shapes, rates = a, b
    if zi_spec is not None:
        shapes = np.append(a, zi_spec.alpha_zi)
        rates = np.append(b, zi_spec.beta_zi)
    nn = n[:, np.newaxis]
    EE = E[:, np.newaxis]
    logc = np.log(w) + nb_log_pmf(nn, shapes, rates, EE)
    ll = logsumexp(logc, axis=1)
    gam = np.exp(logc - ll[:, np.newaxis])
    g2 = gam[:, :2]
    d_alpha = a*(digamma(nn+a) - digamma(a) - np.log1p(EE/b))
    d_beta = (a*EE - nn*b)/(b+EE)
    grad = np.empty(theta.size)
    grad[0:4:2] = np.sum(g2*d_alpha, axis=0)
    grad[1:4:2] = np.sum(g2*d_beta, axis=0)
    grad[4:] = np.sum(gam[:, :-1] - w[:-1], axis=0)
    return -ll.sum(), -grad


def fit_mgps(table, E, variant="two_gamma", zi_spec=None, config=None):
    """
    Fit the 2-gamma or 2-gamma-zi prior by marginal maximum
    likelihood with L-BFGS-B on the unconstrained parameters,
    started from the KM1, KM2, method-of-moments and default
    starting points. The best run is returned.

    Parameters
    ----------
    table : :class:`~pvebayes.tables.ContingencyTable`
        The report counts.
    E : array-like or :class:`~pvebayes.tables.ExpectedCounts`
        The null expected counts.
    variant : string, optional
        "two_gamma" or "two_gamma_zi". Default: "two_gamma"
    zi_spec : :class:`~pvebayes.mgps.ZiComponentSpec`, optional
        The zero-inflation component. Default: ZiComponentSpec()
    config : :class:`~pvebayes.mgps.MgpsConfig`, optional
        The optimizer settings. Default: MgpsConfig()

    Returns
    -------
    A :class:`~pvebayes.mixture.PriorFit` with model "2-gamma" or
    "2-gamma-zi". The fitted :class:`~pvebayes.mgps.MgpsParams`
    are attached as its ``params`` attribute.
    """
    if variant not in variants:
        raise ValueError(f"Unknown MGPS variant '{variant}'! "
                         f"Options are {list(variants.keys())}.")
    zi = variant == "two_gamma_zi"
    if zi and zi_spec is None:
        zi_spec = ZiComponentSpec()
    if not zi:
        zi_spec = None
    if config is None:
        config = MgpsConfig()
    t0 = time.perf_counter()
    n, e = included_cells(table, E, config.exclude_reference_cells)
    starts = {}
    n0 = 0
    for name, make in [("km1", lambda: _km1_from_ratios(n/e)),
                       ("km2", lambda: _km2_from_cells(n, e)),
                       ("mom", lambda: _mom_from_cells(n, e))]:
        try:
            out = make()
        except (DataError, NumericalError, ValueError) as err:
            mylog.warning(f"The {name} starting point failed: {err}")
            continue
        if name == "km2":
            out, n0 = out
        elif name == "mom":
            out, ok = out
            if not ok:
                mylog.warning("The method-of-moments starting point did "
                              "not converge and is skipped.")
                continue
        starts[name] = out
    a1, b1, a2, b2, omega = mgps_default_start
    starts["default"] = MgpsParams(a1, b1, a2, b2, [omega, 1.0-omega])
    if zi:
        zw_km2 = max(n0/n.size, 1.0e-3)
        starts = {k: p.with_zi(zi_spec, zw_km2 if k == "km2" else 0.05)
                  for k, p in starts.items()}
    mylog.info(f"Fitting the {variants[variant]} prior to {n.size} cells "
               f"from {len(starts)} starting points.")
    results = {}
    for name, p in starts.items():
        theta0 = _pack(p)
        try:
            ll0 = -mgps_objective(theta0, n, e, zi_spec)[0]
            res = minimize(mgps_objective, theta0, args=(n, e, zi_spec),
                           jac=True, method="L-BFGS-B",
                           bounds=_bound(theta0.size),
                           options={"maxiter": config.max_iter})
        except (FloatingPointError, ValueError) as err:
            mylog.warning(f"The fit from the {name} start failed: {err}")
            continue
        finite = [(ll, theta) for ll, theta in [(-res.fun, res.x),
                                                (ll0, theta0)]
                  if np.isfinite(ll)]
        if len(finite) == 0:
            mylog.warning(f"The fit from the {name} start failed: "
                          f"{res.message}")
            continue
        ll, theta = max(finite, key=lambda c: c[0])
        results[name] = (ll, _unpack(theta, zi_spec))
        mylog.debug(f"Start {name}: loglik {ll0:.6f} -> "
                    f"{results[name][0]:.6f}")
    if len(results) == 0:
        raise NumericalError("Every MGPS starting point failed!")
    best = max(results, key=lambda k: results[k][0])
    loglik, params = results[best]
    mylog.info(f"{variants[variant]} fit chose the {best} start, "
               f"loglik = {loglik:.6f}.")
    meta = {"params": params.to_dict(), "chosen_start": best,
            "loglik_by_start": {k: float(v[0]) for k, v in results.items()},
            "wall_time": time.perf_counter()-t0}
    fit = PriorFit(variants[variant], params.to_prior(), loglik, meta=meta)
    fit.params = params
    return fit
