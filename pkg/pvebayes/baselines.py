"""
The single-gamma and BCPNN comparison methods, and the posterior
probability based false discovery adjustment applied to both.
"""
import time
import numpy as np
from scipy.stats import norm

from pvebayes.general_gamma import included_cells
from pvebayes.mixture import GammaMixturePrior, PriorFit
from pvebayes.utils import mylog, resolve_option


def fit_single_gamma(table, E, alpha=None, exclude_reference=True):
    """
    The Poisson single-gamma model with the fixed prior
    Gamma(alpha, rate alpha), so that the posterior of each cell is
    Gamma(alpha + N, rate alpha + E).

    Parameters
    ----------
    table : :class:`~pvebayes.tables.ContingencyTable`
        The report counts.
    E : array-like or :class:`~pvebayes.tables.ExpectedCounts`
        The null expected counts.
    alpha : float, optional
        The prior shape and rate. Default: the "single_gamma_alpha"
        configuration value (0.5).
    exclude_reference : boolean, optional
        Whether to leave the reference row and column out of the
        reported log-likelihood. Default: True

    Returns
    -------
    A :class:`~pvebayes.mixture.PriorFit` with model "single-gamma".
    """
    alpha = resolve_option(alpha, "single_gamma_alpha")
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}!")
    t0 = time.perf_counter()
    prior = GammaMixturePrior.from_rates([1.0], [alpha], [alpha])
    n, e = np.asarray(table.counts), np.asarray(E, dtype="float64")
    mask = table.cell_mask(exclude_reference)
    loglik = float(prior.log_marginal(n[mask], e[mask]).sum())
    mylog.info(f"Single-gamma posteriors with alpha = {alpha}.")
    return PriorFit("single-gamma", prior, loglik,
                    meta={"alpha": alpha,
                          "wall_time": time.perf_counter()-t0})


class BcpnnCellStats:
    """
    The information components of every cell of a table under the
    BCPNN model, with their approximate posterior means and
    variances (base 2).

    Parameters
    ----------
    ic_mean : array-like
        The (I, J) approximate posterior means of the IC.
    ic_var : array-like
        The (I, J) approximate posterior variances of the IC.
    beta : array-like
        The (I, J) prior parameters of the cell probabilities.
    meta : dict, optional
        Fit metadata, e.g. the wall time.
    """
    def __init__(self, ic_mean, ic_var, beta, meta=None):
        ic_var = np.asarray(ic_var, dtype="float64")
        if np.any(ic_var <= 0.0):
            raise ValueError("IC variances must be positive!")
        self.ic_mean = np.asarray(ic_mean, dtype="float64")
        self.ic_var = ic_var
        self.beta = np.asarray(beta, dtype="float64")
        if meta is None:
            meta = {}
        self.meta = meta

    def __repr__(self):
        return f"BcpnnCellStats(shape={self.ic_mean.shape})"

    @property
    def shape(self):
        return self.ic_mean.shape

    def prob_signal(self, epsilon=None):
        """
        Pr(2^IC >= 1 + epsilon) under the normal approximation.
        """
        epsilon = resolve_option(epsilon, "signal_epsilon")
        return norm.sf(np.log2(1.0+epsilon), loc=self.ic_mean,
                       scale=np.sqrt(self.ic_var))

    def prob_zero(self, zeta=None):
        return np.full(self.shape, np.nan)

    def to_dict(self):
        d = {"model": "bcpnn", "ic_mean": self.ic_mean.tolist(),
             "ic_var": self.ic_var.tolist(), "beta": self.beta.tolist()}
        d.update(self.meta)
        return d


def fit_bcpnn(table):
    """
    The BCPNN information components of every cell of *table*.
    The Beta(1, beta) prior of each cell probability has its mean
    set to the product of the posterior means of the marginal
    probabilities under uniform priors.

    Parameters
    ----------
    table : :class:`~pvebayes.tables.ContingencyTable`
        The report counts.

    Returns
    -------
    A :class:`~pvebayes.baselines.BcpnnCellStats`.
    """
    t0 = time.perf_counter()
    n = table.counts.astype("float64")
    N = float(table.total)
    ni = table.row_totals.astype("float64")[:, np.newaxis]
    nj = table.col_totals.astype("float64")[np.newaxis, :]
    beta = (N+2.0)**2/((ni+1.0)*(nj+1.0)) - 1.0
    ic_mean = np.log2((n+1.0)*(N+2.0)**2) - \
        np.log2((N+beta)*(ni+1.0)*(nj+1.0))
    ic_var = ((N-n+beta-1.0)/((n+1.0)*(1.0+N+beta)) +
              (N-ni+1.0)/((ni+1.0)*(N+3.0)) +
              (N-nj+1.0)/((nj+1.0)*(N+3.0)))/np.log(2.0)**2
    mylog.info(f"BCPNN information components for a {table.n_rows} x "
               f"{table.n_cols} table.")
    return BcpnnCellStats(ic_mean, ic_var, beta,
                          meta={"wall_time": time.perf_counter()-t0})


def fdr_adjust(prob_nonsignal, level=None):
    """
    Flag the cells with the smallest posterior probabilities of
    being a non-signal, keeping the largest set whose average
    non-signal probability (the posterior expected false discovery
    proportion) is at most *level*.

    Parameters
    ----------
    prob_nonsignal : array-like
        The posterior probabilities 1 - Pr(signal), any shape.
    level : float, optional
        The target false discovery rate. Default: the "fdr_level"
        configuration value (0.05).

    Returns
    -------
    A boolean array of the same shape with the flagged cells.
    """
    level = resolve_option(level, "fdr_level")
    v = np.asarray(prob_nonsignal, dtype="float64")
    if np.any((v < 0.0) | (v > 1.0)):
        raise ValueError("Probabilities must lie in [0, 1]!")
    flat = v.ravel()
    order = np.argsort(flat, kind="stable")
    running = np.cumsum(flat[order])/np.arange(1, flat.size+1)
    ok = np.nonzero(running <= level)[0]
    flags = np.zeros(flat.size, dtype="bool")
    if ok.size > 0:
        flags[order[:ok[-1]+1]] = True
    return flags.reshape(v.shape)
