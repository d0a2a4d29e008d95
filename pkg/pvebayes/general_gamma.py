"""
Sparse general-gamma mixture priors fitted by a bi-level ECM
algorithm, the K-gamma variant without Dirichlet shrinkage, and
cross-validated selection of the Dirichlet concentration.
"""
import time
import numpy as np
from scipy.special import digamma, logsumexp

from pvebayes.constants import exact_digamma_max_n, general_gamma_alphas
from pvebayes.mixture import GammaMixturePrior, PriorFit, nb_log_pmf
from pvebayes.utils import mylog, parse_prng, DataError, NumericalError


class EcmConfig:
    """
    Settings of the general-gamma ECM fit.

    Parameters
    ----------
    K_init : integer, optional
        The number of components to start from. Default: 100
    dirichlet_alpha : float or "auto", optional
        The concentration of the symmetric Dirichlet prior on the
        mixing weights, in (0, 1). "auto" selects it from
        *alpha_candidates* by cross-validation. Default: 0.75
    alpha_candidates : list of floats, optional
        The candidate concentrations for "auto".
        Default: [0.01, 0.25, 0.5, 0.75, 0.99]
    max_iter : integer, optional
        The maximum number of outer iterations. Default: 5000
    outer_tol : float, optional
        Relative change of the objective at which the iterations
        stop. Default: 1.0e-8
    h_tol : float, optional
        The inner scale iterations stop once no scale moves by more
        than this. Default: 1.0e-10
    init_eps : float, optional
        The variance of every initial component. Default: 1.0e-6
    grid_floor : float, optional
        The floor applied to the O/E ratios when building the
        initial grid. Default: 1.0e-4
    n_folds : integer, optional
        The number of cross-validation folds. Default: 5
    seed : integer, optional
        Seed for the initial grid and the folds. Default: None
    exclude_reference_cells : boolean, optional
        Whether to leave the reference row and column out of the
        likelihood. Default: True
    """
    def __init__(self, K_init=100, dirichlet_alpha=0.75,
                 alpha_candidates=None, max_iter=5000, outer_tol=1.0e-8,
                 h_tol=1.0e-10, init_eps=1.0e-6, grid_floor=1.0e-4,
                 n_folds=5, seed=None, exclude_reference_cells=True):
        if alpha_candidates is None:
            alpha_candidates = list(general_gamma_alphas)
        if K_init < 2:
            raise ValueError("K_init must be at least 2!")
        if dirichlet_alpha != "auto":
            dirichlet_alpha = float(dirichlet_alpha)
            if not 0.0 < dirichlet_alpha < 1.0:
                raise ValueError("dirichlet_alpha must lie in (0, 1) "
                                 "or be 'auto'!")
        if len(alpha_candidates) == 0:
            raise ValueError("alpha_candidates must not be empty!")
        if n_folds < 2:
            raise ValueError("n_folds must be at least 2!")
        self.K_init = int(K_init)
        self.dirichlet_alpha = dirichlet_alpha
        self.alpha_candidates = [float(a) for a in alpha_candidates]
        self.max_iter = int(max_iter)
        self.outer_tol = outer_tol
        self.h_tol = h_tol
        self.init_eps = init_eps
        self.grid_floor = grid_floor
        self.n_folds = int(n_folds)
        self.seed = seed
        self.exclude_reference_cells = exclude_reference_cells

    def to_dict(self):
        return dict(self.__dict__)

    def replace(self, **kwargs):
        d = self.to_dict()
        d.update(kwargs)
        return EcmConfig(**d)


class EcmTrace:
    """
    The per-iteration record of an ECM fit.
    """
    def __init__(self):
        self.objective = []
        self.loglik = []
        self.active = []
        self.converged = False

    def append(self, objective, loglik, active):
        self.objective.append(float(objective))
        self.loglik.append(float(loglik))
        self.active.append(int(active))

    @property
    def iterations(self):
        return len(self.objective)

    def segments(self):
        """
        Slices of iterations over which the active component
        set is unchanged.
        """
        bounds = [0] + [k for k in range(1, self.iterations)
                        if self.active[k] != self.active[k-1]] + \
            [self.iterations]
        return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]

    def to_dict(self):
        return {"objective": self.objective, "active": self.active,
                "converged": self.converged}


def included_cells(table, E, exclude_reference):
    E = np.asarray(E, dtype="float64")
    mask = table.cell_mask(exclude_reference)
    n = table.counts[mask].astype("float64")
    e = E[mask]
    if np.any(e <= 0.0):
        raise DataError("Expected counts must be strictly positive on "
                        "every fitted cell!")
    return n, e


def _oe_ratios(n, E, eps):
    return np.maximum(n/E, eps)


def _grid_from_ratios(lam, K, eps, prng):
    lam_max = lam.max()
    if np.ptp(lam) == 0.0:
        hi = lam_max if lam_max > eps else 1.0
        return np.geomspace(eps, hi, K)
    logs = np.log(lam)
    edges = np.histogram_bin_edges(logs, bins="fd")
    if edges.size - 1 < 10:
        edges = np.histogram_bin_edges(logs, bins=10)
    counts = np.histogram(logs, bins=edges)[0]
    which = prng.choice(counts.size, size=K, p=counts/counts.sum())
    v = np.exp(prng.uniform(edges[which], edges[which+1]))
    v = np.sort(np.clip(v, eps, lam_max))
    for k in range(1, K):
        if v[k] <= v[k-1]:
            v[k] = v[k-1]*(1.0+1.0e-9)
    return v


def generate_grid(table, E, K, eps=1.0e-4, prng=None,
                  exclude_reference=True):
    """
    Draw K grid values from a histogram estimate of the
    distribution of the log O/E ratios max(N_ij/E_ij, eps).

    Parameters
    ----------
    table : :class:`~pvebayes.tables.ContingencyTable`
        The report counts.
    E : array-like or :class:`~pvebayes.tables.ExpectedCounts`
        The null expected counts.
    K : integer
        The number of grid values.
    eps : float, optional
        The floor of the O/E ratios. Default: 1.0e-4
    prng : :class:`~numpy.random.RandomState` object, integer, or None
        A pseudo-random number generator. Typically will only
        be specified if you have a reason to generate the same
        set of random numbers, such as for a test. Default is None,
        which sets the seed based on the system time.
    exclude_reference : boolean, optional
        Whether to leave the reference row and column out.
        Default: True

    Returns
    -------
    A sorted array of K distinct positive grid values.
    """
    if K < 2:
        raise ValueError("The grid needs at least 2 points!")
    prng = parse_prng(prng)
    n, e = included_cells(table, E, exclude_reference)
    return _grid_from_ratios(_oe_ratios(n, e, eps), K, eps, prng)


def init_params(grid, eps):
    """
    Initial gamma mixture with one component per grid value v_k,
    each with mean v_k and variance *eps*, and equal weights.
    """
    v = np.asarray(grid, dtype="float64")
    if np.any(v <= 0.0):
        raise ValueError("Grid values must be positive!")
    K = v.size
    return GammaMixturePrior(np.full(K, 1.0/K), v*v/eps, eps/v)


def expected_latent_counts(n, r):
    """
    r*(digamma(n+r) - digamma(r)), summed exactly as
    sum_{m<n} r/(r+m) for small counts.
    """
    n = np.asarray(n, dtype="float64")
    r = np.asarray(r, dtype="float64")
    acc = np.zeros(np.broadcast_shapes(n.shape, r.shape))
    for m in range(exact_digamma_max_n):
        acc += np.where(m < n, 1.0/(r+m), 0.0)
    small = n <= exact_digamma_max_n
    with np.errstate(invalid="ignore"):
        big = digamma(n+r) - digamma(r)
    return r*np.where(small, acc, big)


def _update_scales(n, E, tau, r, h, tol, max_inner=1000):
    num = tau.T @ n
    nn = n[:, np.newaxis]
    EE = E[:, np.newaxis]
    for _ in range(max_inner):
        den = np.sum(tau*EE*(nn+r)/(1.0+EE*h), axis=0)
        h_new = np.where(den > 0.0, np.maximum(num/np.where(den > 0.0, den,
                                                            1.0), 1.0e-10), h)
        done = np.max(np.abs(h_new-h)) < tol
        h = h_new
        if done:
            break
    return h


def _run_ecm(n, E, prior, config, alpha=None):
    """
    The ECM iterations on flat arrays of counts and expected counts.
    With *alpha* None the weights have no Dirichlet prior and no
    component is removed.
    """
    w = prior.weights.copy()
    r = prior.shapes.copy()
    h = prior.scales.copy()
    C = n.size
    prune = alpha is not None
    if prune and C + w.size*(alpha-1.0) <= 0.0:
        raise ValueError(f"K_init = {w.size} is too large for {C} cells "
                         f"with dirichlet_alpha = {alpha}!")
    trace = EcmTrace()
    nn = n[:, np.newaxis]
    EE = E[:, np.newaxis]
    for it in range(config.max_iter):
        with np.errstate(divide="ignore"):
            logc = np.log(w) + nb_log_pmf(nn, r, 1.0/h, EE)
        ll = logsumexp(logc, axis=1)
        if not np.all(np.isfinite(ll)):
            raise NumericalError("Non-finite marginal likelihood in the "
                                 "ECM iterations!")
        loglik = ll.sum()
        obj = loglik
        if prune:
            obj += (alpha-1.0)*np.sum(np.log(w))
        if trace.iterations > 0 and trace.active[-1] == w.size:
            prev = trace.objective[-1]
            if obj < prev - 1.0e-6:
                raise NumericalError(f"The ECM objective decreased from "
                                     f"{prev} to {obj} at iteration {it}!")
            if abs(obj-prev) <= config.outer_tol*abs(prev):
                trace.append(obj, loglik, w.size)
                trace.converged = True
                break
        trace.append(obj, loglik, w.size)
        mylog.debug(f"ECM iteration {it}: objective = {obj:.10g}, "
                    f"K = {w.size}")
        tau = np.exp(logc - ll[:, np.newaxis])
        s = tau.sum(axis=0)
        # CM-1: weights and shapes
        if prune:
            w_new = np.maximum(0.0, s+alpha-1.0)/(C+w.size*(alpha-1.0))
            keep = w_new > 0.0
            if not np.all(keep):
                mylog.debug(f"Dropping {np.sum(~keep)} components at "
                            f"iteration {it}.")
                tau, s, r, h = tau[:, keep], s[keep], r[keep], h[keep]
            w = w_new[keep]/w_new[keep].sum()
        else:
            w = s/C
        delta = expected_latent_counts(nn, r)
        log_theta = -np.log1p(EE*h)
        num = np.sum(tau*delta, axis=0)
        den = np.sum(tau*log_theta, axis=0)
        ok = (s > 1.0e-12*C) & (den < 0.0)
        r = np.where(ok, np.clip(-num/np.where(ok, den, -1.0), 1.0e-8,
                                 1.0e10), r)
        # CM-2: scales
        h = _update_scales(n, E, tau, r, h, config.h_tol)
    if not trace.converged:
        mylog.warning(f"The ECM iterations did not converge within "
                      f"{config.max_iter} iterations.")
    return GammaMixturePrior(w, r, h), trace


def fit_ecm(table, E, config=None):
    """
    Fit the sparse general-gamma mixture prior by the bi-level
    ECM algorithm. Components whose weight is truncated to zero
    are removed for good.

    Parameters
    ----------
    table : :class:`~pvebayes.tables.ContingencyTable`
        The report counts.
    E : array-like or :class:`~pvebayes.tables.ExpectedCounts`
        The null expected counts.
    config : :class:`~pvebayes.general_gamma.EcmConfig`, optional
        The fit settings. Default: EcmConfig()

    Returns
    -------
    A :class:`~pvebayes.mixture.PriorFit` with model "general-gamma".
    The iteration record is attached as its ``trace`` attribute.
    """
    if config is None:
        config = EcmConfig()
    t0 = time.perf_counter()
    meta = {}
    alpha = config.dirichlet_alpha
    if alpha == "auto":
        sel = select_alpha(table, E, config)
        alpha = sel["alpha"]
        meta["alpha_scores"] = sel["scores"]
    n, e = included_cells(table, E, config.exclude_reference_cells)
    grid = _grid_from_ratios(_oe_ratios(n, e, config.grid_floor),
                             config.K_init, config.grid_floor,
                             parse_prng(config.seed))
    mylog.info(f"Fitting a general-gamma prior to {n.size} cells with "
               f"K_init = {config.K_init} and alpha = {alpha}.")
    prior, trace = _run_ecm(n, e, init_params(grid, config.init_eps),
                            config, alpha=alpha)
    loglik = prior.log_marginal(n, e).sum()
    meta.update({"alpha": alpha, "iterations": trace.iterations,
                 "converged": trace.converged,
                 "wall_time": time.perf_counter()-t0})
    mylog.info(f"General-gamma fit finished after {trace.iterations} "
               f"iterations with {prior.K} components, "
               f"loglik = {loglik:.6f}.")
    fit = PriorFit("general-gamma", prior, loglik, meta=meta)
    fit.trace = trace
    return fit


def k_gamma_init(n, E, K, eps=1.0e-4):
    """
    Exponential components whose means sit at evenly spaced
    quantiles of the O/E ratios.
    """
    lam = _oe_ratios(n, E, eps)
    v = np.quantile(lam, (np.arange(K)+0.5)/K)
    v = np.maximum(v, eps)
    for k in range(1, K):
        if v[k] <= v[k-1]:
            v[k] = v[k-1]*(1.0+1.0e-6)
    return GammaMixturePrior(np.full(K, 1.0/K), np.ones(K), v)


def fit_k_gamma(table, E, K, config=None):
    """
    Fit a K-component gamma mixture prior by the same ECM
    iterations without Dirichlet shrinkage; all K components
    are kept.

    Parameters
    ----------
    table : :class:`~pvebayes.tables.ContingencyTable`
        The report counts.
    E : array-like or :class:`~pvebayes.tables.ExpectedCounts`
        The null expected counts.
    K : integer
        The number of mixture components.
    config : :class:`~pvebayes.general_gamma.EcmConfig`, optional
        Iteration settings. Default: EcmConfig()
    """
    if K < 1:
        raise ValueError("K must be at least 1!")
    if config is None:
        config = EcmConfig()
    t0 = time.perf_counter()
    n, e = included_cells(table, E, config.exclude_reference_cells)
    prior, trace = _run_ecm(n, e, k_gamma_init(n, e, K, config.grid_floor),
                            config, alpha=None)
    loglik = prior.log_marginal(n, e).sum()
    mylog.info(f"{K}-gamma fit finished after {trace.iterations} "
               f"iterations, loglik = {loglik:.6f}.")
    fit = PriorFit("k-gamma", prior, loglik,
                   meta={"K": K, "iterations": trace.iterations,
                         "converged": trace.converged,
                         "wall_time": time.perf_counter()-t0})
    fit.trace = trace
    return fit


def select_alpha(table, E, config=None):
    """
    Choose the Dirichlet concentration by cell-wise K-fold
    cross-validation of the held-out log marginal likelihood.
    Ties go to the larger concentration.

    Parameters
    ----------
    table : :class:`~pvebayes.tables.ContingencyTable`
        The report counts.
    E : array-like or :class:`~pvebayes.tables.ExpectedCounts`
        The null expected counts.
    config : :class:`~pvebayes.general_gamma.EcmConfig`, optional
        Supplies the candidates, folds and seed. Default: EcmConfig()

    Returns
    -------
    A dict with the selected "alpha" and the "scores" of every
    candidate (None for disqualified candidates).
    """
    if config is None:
        config = EcmConfig()
    candidates = sorted(config.alpha_candidates)
    if len(candidates) == 1:
        return {"alpha": candidates[0], "scores": {str(candidates[0]): None}}
    n, e = included_cells(table, E, config.exclude_reference_cells)
    C = n.size
    folds = parse_prng(config.seed).permutation(C) % config.n_folds
    scores = {}
    for alpha in candidates:
        score = 0.0
        try:
            for f in range(config.n_folds):
                train = folds != f
                lam = _oe_ratios(n[train], e[train], config.grid_floor)
                K = min(config.K_init, train.sum())
                grid = _grid_from_ratios(lam, K, config.grid_floor,
                                         parse_prng(config.seed))
                prior, _ = _run_ecm(n[train], e[train],
                                    init_params(grid, config.init_eps),
                                    config, alpha=alpha)
                score += prior.log_marginal(n[~train], e[~train]).sum()
        except (NumericalError, ValueError) as err:
            mylog.warning(f"Disqualifying alpha = {alpha}: {err}")
            scores[str(alpha)] = None
            continue
        scores[str(alpha)] = float(score)
        mylog.info(f"Cross-validated score for alpha = {alpha}: {score:.6f}")
    valid = [a for a in candidates if scores[str(a)] is not None]
    if len(valid) == 0:
        raise NumericalError("Every Dirichlet concentration candidate "
                             "failed to fit!")
    best = valid[0]
    for a in valid[1:]:
        if scores[str(a)] >= scores[str(best)]:
            best = a
    mylog.info(f"Selected alpha = {best}.")
    return {"alpha": best, "scores": scores}
