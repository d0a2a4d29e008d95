"""
Discrete nonparametric maximum likelihood priors on a fixed grid,
fitted by SQUAREM-accelerated EM on the probability simplex.
"""
import time
import numpy as np

from pvebayes.constants import km_cache_bytes
from pvebayes.general_gamma import generate_grid, included_cells
from pvebayes.mixture import DiscretePrior, PriorFit, poisson_log_pmf
from pvebayes.utils import mylog, parse_prng, NumericalError


class KmConfig:
    """
    Settings of the discrete NPMLE fit.

    Parameters
    ----------
    K : integer, optional
        The number of grid points. Default: min(3000, 10*I*J)
    grid_floor : float, optional
        The floor of the O/E ratios used to build the grid.
        Default: 1.0e-4
    max_iter : integer, optional
        The maximum number of EM iterations. Default: 10000
    tol : float, optional
        Relative change of the objective at which the iterations
        may stop. Default: 1.0e-10
    seed : integer, optional
        Seed for the grid. Default: None
    exclude_reference_cells : boolean, optional
        Whether to leave the reference row and column out of the
        likelihood. Default: True
    """
    def __init__(self, K=None, grid_floor=1.0e-4, max_iter=10000,
                 tol=1.0e-10, seed=None, exclude_reference_cells=True):
        if K is not None and K < 1:
            raise ValueError("K must be at least 1!")
        self.K = K
        self.grid_floor = grid_floor
        self.max_iter = int(max_iter)
        self.tol = tol
        self.seed = seed
        self.exclude_reference_cells = exclude_reference_cells

    def to_dict(self):
        return dict(self.__dict__)

    def grid_size(self, table):
        if self.K is None:
            return min(3000, 10*table.n_rows*table.n_cols)
        return self.K


def unit_simplex_projection(c):
    """
    Euclidean projection of *c* onto the probability simplex.
    """
    a = -np.sort(-c)
    lambdas = (np.cumsum(a)-1.0)/np.arange(1, c.size+1)
    k = np.nonzero(a > lambdas)[0][-1]
    return np.maximum(c-lambdas[k], 0.0)


class LikelihoodMatrix:
    """
    The cell-by-grid matrix of Poisson likelihoods, scaled so that
    the largest entry of each row is 1. The matrix is cached when
    it fits within the memory cap and rebuilt in row blocks
    otherwise.
    """
    def __init__(self, n, E, support, max_bytes=km_cache_bytes):
        self.n = n
        self.E = E
        self.support = support
        self.shape = (n.size, support.size)
        rows_per_block = max(1, int(max_bytes // (8*support.size)))
        self.blocks = [slice(i, min(i+rows_per_block, n.size))
                       for i in range(0, n.size, rows_per_block)]
        self.row_log_scale = np.empty(n.size)
        self._cached = None
        for b in self.blocks:
            logL = poisson_log_pmf(n[b, np.newaxis],
                                   support*E[b, np.newaxis])
            self.row_log_scale[b] = logL.max(axis=1)
        bad = ~np.isfinite(self.row_log_scale)
        if np.any(bad):
            c = np.nonzero(bad)[0][0]
            raise NumericalError(f"Cell {c} (N = {n[c]:g}, E = {E[c]:g}) has "
                                 f"zero likelihood at every grid point; "
                                 f"try a wider grid.")
        if len(self.blocks) == 1:
            self._cached = self._block(self.blocks[0])
        else:
            mylog.info(f"The likelihood matrix exceeds {max_bytes} bytes; "
                       f"streaming it in {len(self.blocks)} blocks.")

    def _block(self, b):
        if self._cached is not None:
            return self._cached[b]
        logL = poisson_log_pmf(self.n[b, np.newaxis],
                               self.support*self.E[b, np.newaxis])
        return np.exp(logL - self.row_log_scale[b, np.newaxis])

    def dot(self, g):
        if self._cached is not None:
            return self._cached @ g
        return np.concatenate([self._block(b) @ g for b in self.blocks])

    def rdot(self, u):
        if self._cached is not None:
            return u @ self._cached
        out = np.zeros(self.shape[1])
        for b in self.blocks:
            out += u[b] @ self._block(b)
        return out

    def objective(self, g):
        with np.errstate(divide="ignore"):
            return float(np.sum(np.log(self.dot(g))) +
                         self.row_log_scale.sum())

    def em_step(self, g):
        f = self.dot(g)
        D = self.rdot(1.0/f)
        return g*D/self.shape[0], D


def _squarem_step(P, g0):
    g1, _ = P.em_step(g0)
    g2, _ = P.em_step(g1)
    r = g1 - g0
    v = g2 - g1 - r
    vnorm = np.linalg.norm(v)
    g_em = g2
    obj_em = P.objective(g_em)
    if vnorm == 0.0:
        return g_em, obj_em
    step = min(-np.linalg.norm(r)/vnorm, -1.0)
    g = unit_simplex_projection(g0 - 2.0*step*r + step*step*v)
    g = np.maximum(g, 1.0e-12/g.size)
    g /= g.sum()
    g, _ = P.em_step(g)
    obj = P.objective(g)
    if not np.isfinite(obj) or obj < obj_em:
        return g_em, obj_em
    return g, obj


def optimality_gap(P, g):
    """
    max_k [sum_c P_ck/f_c] - n_cells, which is non-positive
    exactly at the maximizer.
    """
    D = P.rdot(1.0/P.dot(g))
    return float(D.max() - P.shape[0])


def solve_npmle(n, E, support, max_iter=10000, tol=1.0e-10):
    """
    Maximize sum_c log sum_k g_k Poisson(n_c | v_k E_c) over the
    probability simplex.

    Returns
    -------
    The masses, the objective, the optimality gap, the number of
    iterations, the objective trace, and whether the stopping rule
    was met.
    """
    P = LikelihoodMatrix(n, E, support)
    K = support.size
    g = np.full(K, 1.0/K)
    if K == 1:
        return np.ones(1), P.objective(g), 0.0, 0, [P.objective(g)], True
    obj = P.objective(g)
    trace = [obj]
    converged = False
    gap_tol = 1.0e-6*n.size
    it = 0
    for it in range(1, max_iter+1):
        g_new, obj_new = _squarem_step(P, g)
        if obj_new < obj - 1.0e-9*abs(obj):
            raise NumericalError(f"The NPMLE objective decreased from {obj} "
                                 f"to {obj_new} at iteration {it}!")
        rel = abs(obj_new-obj)/max(abs(obj), 1.0)
        g, obj = g_new, obj_new
        trace.append(obj)
        if rel < tol and optimality_gap(P, g) <= gap_tol:
            converged = True
            break
    gap = optimality_gap(P, g)
    if not converged:
        mylog.warning(f"The NPMLE iterations stopped at max_iter = "
                      f"{max_iter} with optimality gap {gap:.3g}.")
    g = np.where(g < 1.0e-12, 0.0, g)
    g /= g.sum()
    return g, P.objective(g), gap, it, trace, converged


def fit_km(table, E, config=None, grid=None):
    """
    Fit a discrete prior on a fixed grid by nonparametric
    maximum likelihood.

    Parameters
    ----------
    table : :class:`~pvebayes.tables.ContingencyTable`
        The report counts.
    E : array-like or :class:`~pvebayes.tables.ExpectedCounts`
        The null expected counts.
    config : :class:`~pvebayes.km.KmConfig`, optional
        The fit settings. Default: KmConfig()
    grid : array-like, optional
        Use these support points instead of a generated grid.

    Returns
    -------
    A :class:`~pvebayes.mixture.PriorFit` with model "km".
    """
    if config is None:
        config = KmConfig()
    t0 = time.perf_counter()
    n, e = included_cells(table, E, config.exclude_reference_cells)
    if grid is None:
        K = config.grid_size(table)
        if K == 1:
            grid = np.array([max(n.sum()/e.sum(), config.grid_floor)])
        else:
            grid = generate_grid(table, E, K, eps=config.grid_floor,
                                 prng=parse_prng(config.seed),
                                 exclude_reference=
                                 config.exclude_reference_cells)
    support = np.asarray(grid, dtype="float64")
    mylog.info(f"Fitting a discrete NPMLE prior to {n.size} cells on "
               f"{support.size} grid points.")
    g, loglik, gap, iters, trace, converged = \
        solve_npmle(n, e, support, max_iter=config.max_iter, tol=config.tol)
    mylog.info(f"NPMLE fit finished after {iters} iterations, "
               f"loglik = {loglik:.6f}, gap = {gap:.3g}.")
    fit = PriorFit("km", DiscretePrior(support, g), loglik,
                   meta={"gap": gap, "iterations": iters,
                         "converged": converged,
                         "wall_time": time.perf_counter()-t0})
    fit.trace = trace
    return fit


def km_objective(prior, table, E, exclude_reference=True):
    """
    The log marginal likelihood of a discrete prior on the
    cells of *table*.
    """
    n, e = included_cells(table, E, exclude_reference)
    return float(prior.log_marginal(n, e).sum())
