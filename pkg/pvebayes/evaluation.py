"""
Signal detection, replication-based false discovery rates and
sensitivities, and the scaled Wasserstein distances between
posteriors and true signal strengths.
"""
import numpy as np
from astropy.table import Table
from scipy.special import gammainc

from pvebayes.baselines import fdr_adjust as _fdr_adjust
from pvebayes.mixture import GammaMixturePosterior, DiscretePosterior
from pvebayes.tables import get_expected
from pvebayes.utils import mylog, resolve_option, check_file_location


class DetectionResult:
    """
    Signal flags for every cell of a table.

    Parameters
    ----------
    flags : array-like
        The (I, J) boolean flags.
    prob_signal : array-like
        The (I, J) posterior probabilities of being a signal.
    threshold : float
        The probability threshold used, or None if the cells were
        selected by the false discovery adjustment.
    epsilon : float
        The signal margin used.
    fdr_level : float, optional
        The false discovery level, if the adjustment was used.
    """
    def __init__(self, flags, prob_signal, threshold, epsilon,
                 fdr_level=None):
        self.flags = np.asarray(flags, dtype="bool")
        self.prob_signal = np.asarray(prob_signal, dtype="float64")
        self.threshold = threshold
        self.epsilon = epsilon
        self.fdr_level = fdr_level

    def __repr__(self):
        return f"DetectionResult(n_flagged={self.n_flagged}, " \
               f"threshold={self.threshold}, epsilon={self.epsilon})"

    @property
    def n_flagged(self):
        return int(self.flags.sum())

    def counts_per_drug(self, table):
        """
        The number of flagged AEs for every non-reference drug.
        """
        counts = self.flags[:, :-1].sum(axis=0)
        return dict(zip(table.col_labels[:-1], counts.tolist()))

    def to_table(self, table):
        I, J = table.shape
        t = Table()
        t["AE"] = np.repeat(table.row_labels, J)
        t["drug"] = np.tile(table.col_labels, I)
        t["prob_signal"] = self.prob_signal.ravel()
        t["flag"] = self.flags.ravel()
        t.meta["threshold"] = self.threshold
        t.meta["epsilon"] = self.epsilon
        t.meta["fdr_level"] = self.fdr_level
        return t

    def write_file(self, filename, table, overwrite=False):
        """
        Write the per-cell flags to a CSV file.

        Parameters
        ----------
        filename : string
            The CSV file to write.
        table : :class:`~pvebayes.tables.ContingencyTable`
            The table the flags belong to.
        overwrite : boolean, optional
            Whether or not to overwrite an existing
            file with the same name. Default: False
        """
        check_file_location(filename, overwrite)
        self.to_table(table).write(filename, format="ascii.csv",
                                   overwrite=True)


def detect(posteriors, threshold=None, epsilon=None, exclude_reference=True,
           fdr_adjust=False, fdr_level=None):
    """
    Flag the cells whose posterior probability of
    lambda >= 1 + epsilon exceeds *threshold*, or, with
    *fdr_adjust*, the cells selected by the posterior false
    discovery adjustment.

    Parameters
    ----------
    posteriors : posterior object or array-like
        Anything with a ``prob_signal(epsilon)`` method returning
        (I, J) probabilities, or the (I, J) probabilities themselves.
    threshold : float, optional
        The probability threshold. Default: the "signal_threshold"
        configuration value (0.95).
    epsilon : float, optional
        The signal margin. Default: the "signal_epsilon"
        configuration value (0.001).
    exclude_reference : boolean, optional
        Never flag the reference row and column. Default: True
    fdr_adjust : boolean, optional
        Select the cells by :func:`~pvebayes.baselines.fdr_adjust`
        instead of the threshold. Default: False
    fdr_level : float, optional
        The false discovery level. Default: the "fdr_level"
        configuration value (0.05).

    Returns
    -------
    A :class:`~pvebayes.evaluation.DetectionResult`.
    """
    epsilon = resolve_option(epsilon, "signal_epsilon")
    if hasattr(posteriors, "prob_signal"):
        prob = np.asarray(posteriors.prob_signal(epsilon), dtype="float64")
    else:
        prob = np.asarray(posteriors, dtype="float64")
    if prob.ndim != 2:
        raise ValueError(f"Expected an (I, J) array of probabilities, "
                         f"got shape {prob.shape}!")
    eligible = np.ones(prob.shape, dtype="bool")
    if exclude_reference:
        eligible[-1, :] = False
        eligible[:, -1] = False
    flags = np.zeros(prob.shape, dtype="bool")
    if fdr_adjust:
        fdr_level = resolve_option(fdr_level, "fdr_level")
        flags[eligible] = _fdr_adjust(1.0-prob[eligible], level=fdr_level)
        threshold = None
    else:
        threshold = resolve_option(threshold, "signal_threshold")
        flags[eligible] = prob[eligible] > threshold
        fdr_level = None
    mylog.debug(f"{flags.sum()} cells flagged.")
    return DetectionResult(flags, prob, threshold, epsilon,
                           fdr_level=fdr_level)


def _truth_list(truth, M):
    if isinstance(truth, (list, tuple)):
        if len(truth) != M:
            raise ValueError(f"Got {len(truth)} truth matrices for "
                             f"{M} replicates!")
        return [np.asarray(t, dtype="float64") for t in truth]
    truth = np.asarray(truth, dtype="float64")
    if truth.ndim == 3:
        return _truth_list(list(truth), M)
    return [truth]*M


def replication_fdr_sensitivity(decisions, truth):
    """
    Replication-averaged false discovery rate and sensitivity.
    Signals are the cells with true lambda > 1. A replicate
    without discoveries contributes 0 to the false discovery rate.

    Parameters
    ----------
    decisions : list of array-like
        The (I, J) boolean flags of each of the M replicates.
    truth : array-like or list of array-like
        The true signal strengths, either one (I, J) matrix or one
        per replicate.

    Returns
    -------
    A dict with "fdr" and "sensitivity".
    """
    M = len(decisions)
    if M < 1:
        raise ValueError("At least one replicate is needed!")
    truths = _truth_list(truth, M)
    fdr = np.zeros(M)
    sens = np.zeros(M)
    for m, (d, t) in enumerate(zip(decisions, truths)):
        d = np.asarray(d, dtype="bool")
        if d.shape != t.shape:
            raise ValueError(f"Decision shape {d.shape} does not match "
                             f"truth shape {t.shape}!")
        signal = t > 1.0
        n_disc = d.sum()
        if n_disc > 0:
            fdr[m] = np.sum(d & ~signal)/n_disc
        if signal.sum() > 0:
            sens[m] = np.sum(d & signal)/signal.sum()
    return {"fdr": float(fdr.mean()), "sensitivity": float(sens.mean())}


def scaled_wasserstein(post, lambda_true, p=2):
    """
    The Wasserstein-p distance between a posterior and the point
    mass at the true signal strength, divided by the true strength.
    For p = 1 this is the scaled posterior mean absolute error, for
    p = 2 the scaled posterior root mean squared error.

    Parameters
    ----------
    post : posterior object
        A gamma-mixture or discrete posterior.
    lambda_true : float or array-like
        The true signal strength(s), broadcast against the
        posterior shape. Must be positive.
    p : integer, optional
        1 or 2. Default: 2
    """
    if not isinstance(post, (GammaMixturePosterior, DiscretePosterior)):
        raise TypeError(f"Unsupported posterior type {type(post)}!")
    t = np.asarray(lambda_true, dtype="float64")
    if np.any(t <= 0.0):
        raise ValueError("The true signal strength must be positive!")
    t = np.broadcast_to(t, post.shape)
    if p == 2:
        msd = post.second_moment - 2.0*t*post.mean + t*t
        return np.sqrt(np.maximum(msd, 0.0))/t
    elif p != 1:
        raise ValueError(f"p must be 1 or 2, got {p}!")
    tt = t[..., np.newaxis]
    if isinstance(post, GammaMixturePosterior):
        x = post.rates*tt
        F = gammainc(post.shapes, x)
        F1 = gammainc(post.shapes+1.0, x)
        m = post.shapes/post.rates
        mae = np.sum(post.weights*(tt*(2.0*F-1.0) + m*(1.0-2.0*F1)),
                     axis=-1)
    else:
        mae = np.sum(post.masses*np.abs(post.support-tt), axis=-1)
    return np.maximum(mae, 0.0)/t


class MetricReport:
    """
    Replication-based detection and estimation metrics of one
    method in one scenario. Distances are averaged (or maximized)
    over the true signal cells of each replicate, then averaged
    over replicates.
    """
    def __init__(self, fdr, sensitivity, avg_scaled_w1, max_scaled_w1,
                 avg_scaled_w2, max_scaled_w2, per_replicate=None,
                 n_replicates=0, n_excluded=0):
        self.fdr = fdr
        self.sensitivity = sensitivity
        self.avg_scaled_w1 = avg_scaled_w1
        self.max_scaled_w1 = max_scaled_w1
        self.avg_scaled_w2 = avg_scaled_w2
        self.max_scaled_w2 = max_scaled_w2
        if per_replicate is None:
            per_replicate = {}
        self.per_replicate = per_replicate
        self.n_replicates = n_replicates
        self.n_excluded = n_excluded

    def __repr__(self):
        return f"MetricReport(fdr={self.fdr:.4g}, " \
               f"sensitivity={self.sensitivity:.4g}, " \
               f"max_scaled_w2={self.max_scaled_w2:.4g})"

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k != "per_replicate"}
        for key, values in self.per_replicate.items():
            if len(values) > 0 and np.all(np.isfinite(values)):
                d[f"{key}_p05"] = float(np.percentile(values, 5))
                d[f"{key}_p95"] = float(np.percentile(values, 95))
        return d

    def to_rows(self, **labels):
        """
        Tidy rows, one per metric, each carrying *labels* (e.g.
        the scenario and method names).
        """
        rows = []
        for metric, value in self.to_dict().items():
            row = dict(labels)
            row["metric"] = metric
            row["value"] = float(value)
            rows.append(row)
        return rows


def _summarize_distances(per_cell, truths):
    avg = np.empty(len(per_cell))
    mx = np.empty(len(per_cell))
    for m, (w, t) in enumerate(zip(per_cell, truths)):
        sig = t > 1.0
        if not np.any(sig):
            raise ValueError("The signal set is empty!")
        w = np.asarray(w, dtype="float64")[sig]
        avg[m] = w.mean()
        mx[m] = w.max()
    return avg, mx


def aggregate_metrics(w1, w2, truth, decisions=None, n_excluded=0):
    """
    Combine per-cell scaled distances and detection flags over
    replicates.

    Parameters
    ----------
    w1, w2 : list of array-like or None
        The per-replicate (I, J) scaled Wasserstein-1 and
        Wasserstein-2 distances. None for methods without a
        posterior on lambda.
    truth : array-like or list of array-like
        The true signal strengths, one matrix or one per replicate.
        The signal cells are those with lambda > 1.
    decisions : list of array-like, optional
        The per-replicate flags for the detection metrics.
    n_excluded : integer, optional
        The number of replicates left out because the fit failed.

    Returns
    -------
    A :class:`~pvebayes.evaluation.MetricReport`.
    """
    M = len(decisions) if w2 is None else len(w2)
    truths = _truth_list(truth, M)
    per_rep = {}
    out = {}
    for name, w in [("scaled_w1", w1), ("scaled_w2", w2)]:
        if w is None:
            out[f"avg_{name}"] = out[f"max_{name}"] = np.nan
            continue
        avg, mx = _summarize_distances(w, truths)
        per_rep[f"avg_{name}"] = avg
        per_rep[f"max_{name}"] = mx
        out[f"avg_{name}"] = float(avg.mean())
        out[f"max_{name}"] = float(mx.mean())
    if decisions is not None:
        det = replication_fdr_sensitivity(decisions, truths)
    else:
        det = {"fdr": np.nan, "sensitivity": np.nan}
    return MetricReport(det["fdr"], det["sensitivity"],
                        out["avg_scaled_w1"], out["max_scaled_w1"],
                        out["avg_scaled_w2"], out["max_scaled_w2"],
                        per_replicate=per_rep, n_replicates=M,
                        n_excluded=n_excluded)


def e_estimator_rmse(tables, E_true, kind, p=2):
    """
    Replication-based scaled error of an expected-count estimator
    in every cell: the root mean squared (p = 2) or mean absolute
    (p = 1) relative error over the replicated tables.

    Parameters
    ----------
    tables : list of :class:`~pvebayes.tables.ContingencyTable`
        The replicated tables.
    E_true : array-like
        The (I, J) true null expected counts.
    kind : string
        "natural" or "reference".
    p : integer, optional
        1 or 2. Default: 2
    """
    E_true = np.asarray(E_true, dtype="float64")
    if np.any(E_true <= 0.0):
        raise ValueError("The true expected counts must be positive!")
    rel = np.array([(np.asarray(get_expected(t, kind))-E_true)/E_true
                    for t in tables])
    if p == 2:
        return np.sqrt(np.mean(rel**2, axis=0))
    elif p == 1:
        return np.mean(np.abs(rel), axis=0)
    raise ValueError(f"p must be 1 or 2, got {p}!")


def forest_summary(fit, table, E, ae_labels=None, level=0.90):
    """
    Posterior medians and equal-tailed credible intervals of the
    signal strengths of the non-reference cells.

    Parameters
    ----------
    fit : :class:`~pvebayes.mixture.PriorFit`
        The fitted prior.
    table : :class:`~pvebayes.tables.ContingencyTable`
        The report counts.
    E : array-like
        The null expected counts.
    ae_labels : list of strings, optional
        Only report these AEs. Default: all non-reference AEs
    level : float, optional
        The credible level. Default: 0.90
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}!")
    post = fit.posterior(table, E)
    rows = table.row_labels[:-1]
    if ae_labels is not None:
        missing = set(ae_labels) - set(rows)
        if missing:
            raise KeyError(f"Unknown AE labels {sorted(missing)}!")
        rows = [lb for lb in rows if lb in ae_labels]
    idx = [table.row_labels.index(lb) for lb in rows]
    sub = post[np.ix_(idx, np.arange(table.n_cols-1))]
    E = np.asarray(E, dtype="float64")
    a = 0.5*(1.0-level)
    t = Table()
    J = table.n_cols-1
    t["AE"] = np.repeat(rows, J)
    t["drug"] = np.tile(table.col_labels[:-1], len(rows))
    t["N"] = table.counts[np.ix_(idx, range(J))].ravel()
    t["E"] = E[np.ix_(idx, range(J))].ravel()
    t["median"] = np.asarray(sub.quantile(0.5)).ravel()
    t["lower"] = np.asarray(sub.quantile(a)).ravel()
    t["upper"] = np.asarray(sub.quantile(1.0-a)).ravel()
    t.meta["level"] = level
    t.meta["model"] = fit.model
    return t


def signal_count_table(results, table):
    """
    The number of flagged AEs per non-reference drug, one row per
    method.

    Parameters
    ----------
    results : dict
        Method name -> :class:`~pvebayes.evaluation.DetectionResult`.
    table : :class:`~pvebayes.tables.ContingencyTable`
        The table the results belong to.
    """
    t = Table()
    t["method"] = list(results.keys())
    for j, drug in enumerate(table.col_labels[:-1]):
        t[drug] = [int(r.flags[:, j].sum()) for r in results.values()]
    return t
