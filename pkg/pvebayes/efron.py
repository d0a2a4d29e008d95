"""
Exponential-family priors on a fixed grid, g(a) = softmax(Q a), with
a natural cubic spline basis Q, fitted by maximizing the marginal
log-likelihood with an L2-norm penalty on a.
"""
import time
import numpy as np
from scipy.optimize import minimize
from scipy.special import softmax

from pvebayes.constants import efron_max_halvings, efron_max_passes
from pvebayes.general_gamma import generate_grid, included_cells
from pvebayes.km import LikelihoodMatrix
from pvebayes.mixture import DiscretePrior, PriorFit
from pvebayes.utils import mylog, parse_prng, DataError, NumericalError


class EfronConfig:
    """
    Settings of the exponential-family prior fit.

    Parameters
    ----------
    K : integer, optional
        The number of grid points. Default: min(3000, 10*I*J)
    p : integer, optional
        The degrees of freedom of the spline basis. Default: 120
    c0 : float, optional
        The weight of the L2-norm penalty. Default: 0.01
    max_iter : integer, optional
        The maximum number of quasi-Newton iterations. Default: 2000
    grad_tol : float, optional
        Gradient tolerance, relative to 1 + |objective|. Default: 1.0e-7
    grid_floor : float, optional
        The floor of the O/E ratios used to build the grid.
        Default: 1.0e-4
    seed : integer, optional
        Seed for the grid. Default: None
    exclude_reference_cells : boolean, optional
        Whether to leave the reference row and column out of the
        likelihood. Default: True
    """
    def __init__(self, K=None, p=120, c0=0.01, max_iter=2000,
                 grad_tol=1.0e-7, grid_floor=1.0e-4, seed=None,
                 exclude_reference_cells=True):
        if p < 1:
            raise ValueError("p must be at least 1!")
        if K is not None and p >= K:
            raise ValueError(f"p = {p} must be smaller than K = {K}!")
        if c0 < 0.0:
            raise ValueError("c0 must be non-negative!")
        self.K = K
        self.p = int(p)
        self.c0 = float(c0)
        self.max_iter = int(max_iter)
        self.grad_tol = grad_tol
        self.grid_floor = grid_floor
        self.seed = seed
        self.exclude_reference_cells = exclude_reference_cells

    def to_dict(self):
        return dict(self.__dict__)

    def grid_size(self, table):
        if self.K is None:
            return min(3000, 10*table.n_rows*table.n_cols)
        return self.K


def _natural_spline_columns(x, knots):
    # truncated-power basis of the natural cubic spline, intercept dropped
    def d(k):
        return (np.maximum(x-knots[k], 0.0)**3 -
                np.maximum(x-knots[-1], 0.0)**3)/(knots[-1]-knots[k])
    m = knots.size
    cols = [x]
    last = d(m-2)
    for k in range(m-2):
        cols.append(d(k)-last)
    return np.column_stack(cols)


def build_spline_basis(support, p):
    """
    A natural cubic spline basis with *p* degrees of freedom on the
    log of the support points, with knots at equally spaced
    quantiles. The columns are centered and orthonormalized, so each
    has zero sum and unit norm and the penalty ||a|| is invariant to
    the choice of spline parametrization.

    Parameters
    ----------
    support : array-like
        The K grid points.
    p : integer
        The degrees of freedom, 1 <= p < K.

    Returns
    -------
    A (K, p) array.
    """
    v = np.asarray(support, dtype="float64")
    if np.unique(v).size != v.size:
        raise DataError("The support points must be distinct!")
    if not 1 <= p < v.size:
        raise ValueError(f"p = {p} must lie in [1, {v.size-1}]!")
    x = np.log(v)
    knots = np.quantile(x, np.linspace(0.0, 1.0, p+1))
    B = _natural_spline_columns(x, knots)
    B -= B.mean(axis=0)
    Q, _ = np.linalg.qr(B)
    return Q


def _operator(P):
    if isinstance(P, LikelihoodMatrix):
        return P.dot, P.rdot, P.shape[0], P.row_log_scale.sum()
    P = np.asarray(P)
    return (lambda g: P @ g), (lambda u: u @ P), P.shape[0], 0.0


def efron_objective_and_gradient(alpha, P, Q, c0):
    """
    The penalized marginal log-likelihood
    sum_c log(P_c . g(alpha)) - c0*||alpha|| and its gradient.

    Parameters
    ----------
    alpha : array-like
        The length-p coefficient vector.
    P : array-like or :class:`~pvebayes.km.LikelihoodMatrix`
        The cell-by-grid likelihoods.
    Q : array-like
        The (K, p) spline basis.
    c0 : float
        The penalty weight.

    Returns
    -------
    The value and the gradient. At alpha = 0 the penalty
    contributes the subgradient 0.
    """
    alpha = np.asarray(alpha, dtype="float64")
    dot, rdot, C, offset = _operator(P)
    g = softmax(Q @ alpha)
    f = dot(g)
    norm = np.linalg.norm(alpha)
    with np.errstate(divide="ignore"):
        value = np.sum(np.log(f)) + offset - c0*norm
    grad = Q.T @ (g*rdot(1.0/f) - C*g)
    if norm > 0.0:
        grad -= c0*alpha/norm
    return value, grad


def _is_stationary(value, grad, grad_tol):
    return np.linalg.norm(grad) <= grad_tol*(1.0+abs(value))


def _ascend(neg, a0, value0, config, callback, trace):
    """
    Run L-BFGS-B on *neg* from *a0* until the gradient norm is at
    most grad_tol*(1 + |objective|). The optimizer's own stopping
    rule bounds the largest gradient component against the objective
    of the previous pass, so a pass that ends short of the norm
    condition is followed by another from where it stopped.
    """
    alpha, value = a0, value0
    iterations = 0
    for _ in range(efron_max_passes):
        gtol = config.grad_tol*(1.0+abs(value))/np.sqrt(alpha.size)
        res = minimize(neg, alpha, jac=True, method="L-BFGS-B",
                       callback=callback,
                       options={"maxiter": config.max_iter-iterations,
                                "gtol": gtol, "ftol": 1.0e-15,
                                "maxls": efron_max_halvings})
        iterations += int(res.nit)
        message = str(res.message)
        if "LNSRCH" in message.upper():
            raise NumericalError(
                f"The exponential-family line search failed after "
                f"{iterations} iterations: {message}. Last objective "
                f"values: {trace[-5:]}")
        if not np.isfinite(res.fun) or -res.fun < value0:
            raise NumericalError(f"The exponential-family fit failed: "
                                 f"{message}")
        alpha, value = res.x, -res.fun
        if _is_stationary(value, res.jac, config.grad_tol):
            return alpha, iterations, True
        if not res.success or iterations >= config.max_iter:
            mylog.warning(f"The exponential-family fit stopped after "
                          f"{iterations} iterations: {message}")
            return alpha, iterations, False
    mylog.warning(f"The exponential-family fit did not reach a gradient "
                  f"norm of {config.grad_tol:g}*(1+|objective|) in "
                  f"{efron_max_passes} passes.")
    return alpha, iterations, False


def fit_efron(table, E, config=None, grid=None):
    """
    Fit an exponential-family spline prior on a fixed grid by
    penalized marginal maximum likelihood.

    Parameters
    ----------
    table : :class:`~pvebayes.tables.ContingencyTable`
        The report counts.
    E : array-like or :class:`~pvebayes.tables.ExpectedCounts`
        The null expected counts.
    config : :class:`~pvebayes.efron.EfronConfig`, optional
        The fit settings. Default: EfronConfig()
    grid : array-like, optional
        Use these support points instead of a generated grid.

    Returns
    -------
    A :class:`~pvebayes.mixture.PriorFit` with model "efron"; the
    fitted coefficients are stored as "alpha_hat" in its metadata,
    and the objective after each accepted step as "objective_trace".

    Raises
    ------
    NumericalError
        If a line search fails after 60 step halvings.
    """
    if config is None:
        config = EfronConfig()
    t0 = time.perf_counter()
    n, e = included_cells(table, E, config.exclude_reference_cells)
    if grid is None:
        grid = generate_grid(table, E, config.grid_size(table),
                             eps=config.grid_floor,
                             prng=parse_prng(config.seed),
                             exclude_reference=
                             config.exclude_reference_cells)
    support = np.asarray(grid, dtype="float64")
    Q = build_spline_basis(support, config.p)
    P = LikelihoodMatrix(n, e, support)
    mylog.info(f"Fitting an exponential-family prior to {n.size} cells "
               f"with K = {support.size}, p = {config.p}, c0 = {config.c0}.")

    last = {}

    def _neg(a):
        value, grad = efron_objective_and_gradient(a, P, Q, config.c0)
        last["alpha"], last["value"] = a.copy(), value
        return -value, -grad

    a0 = np.zeros(config.p)
    value0, grad0 = efron_objective_and_gradient(a0, P, Q, config.c0)
    trace = [float(value0)]

    def _record(xk):
        if "alpha" in last and np.array_equal(xk, last["alpha"]):
            trace.append(float(last["value"]))
        else:
            trace.append(float(efron_objective_and_gradient(
                xk, P, Q, config.c0)[0]))

    alpha_hat = a0
    iterations = 0
    if np.linalg.norm(grad0) <= config.c0:
        mylog.info("The penalty dominates; the fitted prior is uniform.")
        converged = True
    else:
        alpha_hat, iterations, converged = _ascend(
            _neg, a0, value0, config, _record, trace)
    g = softmax(Q @ alpha_hat)
    prior = DiscretePrior(support, g)
    loglik = P.objective(g)
    mylog.info(f"Exponential-family fit finished after {iterations} "
               f"iterations, loglik = {loglik:.6f}.")
    meta = {"alpha_hat": alpha_hat.tolist(), "p": config.p, "c0": config.c0,
            "iterations": iterations, "converged": converged,
            "objective_trace": trace,
            "wall_time": time.perf_counter()-t0}
    return PriorFit("efron", prior, loglik, meta=meta)
