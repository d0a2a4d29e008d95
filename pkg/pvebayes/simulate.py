"""
Simulated AE-drug report tables: the signal-strength scenarios,
the multinomial generator, and the replication studies that fit,
detect and score every method.
"""
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import yaml
from astropy.table import Table

from pvebayes.constants import signal_positions, setting_cases, \
    setting2_fixed_strength, setting3_strengths, zi_levels, \
    signal_strengths, perturb_sd, perturb_bounds_nonsignal, \
    perturb_bounds_signal
from pvebayes.evaluation import detect, scaled_wasserstein, \
    aggregate_metrics, e_estimator_rmse
from pvebayes.model_registry import model_registry, fit_model
from pvebayes.tables import ContingencyTable, AmseInputs, load_fixture, \
    expected_natural, reference_advantage
from pvebayes.utils import mylog, parse_prng, replicate_prng, new_seed, \
    get_pbar, DataError, NumericalError, check_file_location, \
    pvebayes_files_path


class SimulationScenario:
    """
    A true signal-strength matrix with its frozen structural zeros
    and the marginal proportions of an exemplar table.

    Parameters
    ----------
    lambda_true : array-like
        The (I, J) true signal strengths before zero inflation.
    zero_mask : array-like
        The (I, J) boolean structural-zero indicators.
    marginals : :class:`~pvebayes.tables.ContingencyTable`
        The exemplar table supplying the marginal proportions,
        the grand total and the labels.
    signal_mask : array-like, optional
        The designated signal cells. Default: lambda_true > 1
    perturb : boolean, optional
        Whether every replicate adds truncated-normal noise to the
        true signal strengths. Default: False
    replicates : integer, optional
        The number of replicates. Default: 100
    seed : integer, optional
        The seed of the replicate streams. Default: None
    params : dict, optional
        The parameters this scenario was built from.
    """
    def __init__(self, lambda_true, zero_mask, marginals, signal_mask=None,
                 perturb=False, replicates=100, seed=None, params=None):
        lam = np.asarray(lambda_true, dtype="float64")
        zero_mask = np.asarray(zero_mask, dtype="bool")
        if lam.shape != marginals.shape or zero_mask.shape != lam.shape:
            raise DataError(f"lambda_true and zero_mask must have the "
                            f"shape {marginals.shape} of the exemplar table!")
        if np.any(lam[-1, :] != 1.0) or np.any(lam[:, -1] != 1.0):
            raise DataError("The reference row and column must have "
                            "lambda = 1!")
        if np.any(zero_mask[-1, :]) or np.any(zero_mask[:, -1]):
            raise DataError("The reference row and column cannot hold "
                            "structural zeros!")
        if replicates < 1:
            raise DataError("At least one replicate is needed!")
        if seed is None:
            seed = new_seed()
        if signal_mask is None:
            signal_mask = lam > 1.0
        self.lambda_true = lam
        self.zero_mask = zero_mask
        self.signal_mask = np.asarray(signal_mask, dtype="bool")
        self.marginals = marginals
        self.perturb = perturb
        self.replicates = int(replicates)
        self.seed = seed
        if params is None:
            params = {}
        self.params = params

    def __repr__(self):
        return f"SimulationScenario({self.name}, " \
               f"replicates={self.replicates}, seed={self.seed})"

    @property
    def name(self):
        if not self.params:
            return "custom"
        p = self.params
        s = f"setting{p['setting']}_case{p['case']}"
        if p.get("strength") is not None:
            s += f"_lambda{p['strength']}"
        s += f"_zi{p['zi_level']}"
        if self.perturb:
            s += "_perturbed"
        return s

    @property
    def shape(self):
        return self.lambda_true.shape

    @property
    def p_row(self):
        return self.marginals.row_totals/self.marginals.total

    @property
    def p_col(self):
        return self.marginals.col_totals/self.marginals.total

    @property
    def grand_total(self):
        return self.marginals.total

    @property
    def lambda_effective(self):
        return np.where(self.zero_mask, 0.0, self.lambda_true)

    def replicate_truth(self, index, prng=None):
        """
        The true signal strengths of replicate *index*, with
        structural zeros set to 0. With perturbation on, every
        non-reference cell gets truncated-normal noise, bounded by
        (-0.4, 0) for non-signal cells and (-0.2, 0.2) for signal
        cells.
        """
        lam = self.lambda_effective.copy()
        if not self.perturb:
            return lam
        if prng is None:
            prng = replicate_prng(self.seed, index)
        noisy = ~self.zero_mask
        noisy[-1, :] = False
        noisy[:, -1] = False
        lo = np.where(self.signal_mask, perturb_bounds_signal[0],
                      perturb_bounds_nonsignal[0])
        hi = np.where(self.signal_mask, perturb_bounds_signal[1],
                      perturb_bounds_nonsignal[1])
        noise = truncated_normal(lo[noisy], hi[noisy], perturb_sd, prng)
        lam[noisy] += noise
        return lam

    def cell_probabilities(self, lam=None):
        if lam is None:
            lam = self.lambda_effective
        w = lam*np.outer(self.p_row, self.p_col)
        total = w.sum()
        if total <= 0.0:
            raise DataError("Every cell probability is zero!")
        return w/total

    def to_dict(self):
        d = dict(self.params)
        d.update({"perturb": self.perturb, "replicates": self.replicates,
                  "seed": self.seed})
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ["methods", "options", "e_estimator", "assigned_strengths"]:
            d.pop(key, None)
        return build_setting(**d)

    @classmethod
    def from_file(cls, filename):
        """
        Build a scenario from a YAML (or JSON) file holding the
        keyword arguments of :func:`~pvebayes.simulate.build_setting`.
        """
        with open(filename, "r") as f:
            d = yaml.safe_load(f)
        if not isinstance(d, dict):
            raise DataError(f"The scenario file {filename} does not "
                            f"hold a mapping!")
        return cls.from_dict(d)

    def write_yaml(self, filename, overwrite=False):
        """
        Write the scenario parameters to a YAML file.

        Parameters
        ----------
        filename : string
            The filename to write the scenario to.
        overwrite : boolean, optional
            Whether or not to overwrite an existing
            file with the same name. Default: False
        """
        check_file_location(filename, overwrite)
        with open(filename, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)


def truncated_normal(lo, hi, sd, prng):
    """
    Draws from N(0, sd^2) truncated to (lo, hi), by rejection.
    *lo* and *hi* are arrays of per-draw bounds.
    """
    lo = np.asarray(lo, dtype="float64")
    hi = np.asarray(hi, dtype="float64")
    out = prng.normal(0.0, sd, size=lo.shape)
    bad = (out <= lo) | (out >= hi)
    while np.any(bad):
        out[bad] = prng.normal(0.0, sd, size=bad.sum())
        bad = (out <= lo) | (out >= hi)
    return out


def build_setting(setting, case, strength=None, zi_level="none",
                  perturb=False, seed=None, replicates=100, marginals=None):
    """
    Build one scenario of the simulation study.

    Parameters
    ----------
    setting : string
        "I" (homogeneous signals, cases 1-3), "II" (moderately
        heterogeneous, case 4) or "III" (highly heterogeneous,
        case 5).
    case : integer
        The signal-position case.
    strength : float, optional
        The swept signal strength. Required for settings I and II,
        ignored for setting III.
    zi_level : string, optional
        The structural-zero level: "none", "0.25" or "0.5".
        Default: "none"
    perturb : boolean, optional
        Whether the replicates use perturbed truth. Default: False
    seed : integer, optional
        Seed of the zero positions and the replicate streams.
    replicates : integer, optional
        The number of replicates. Default: 100
    marginals : :class:`~pvebayes.tables.ContingencyTable`, optional
        The exemplar table. Default: the bundled statin-42 table.

    Returns
    -------
    A :class:`~pvebayes.simulate.SimulationScenario`.
    """
    setting = str(setting)
    zi_level = str(zi_level)
    if setting not in setting_cases:
        raise DataError(f"Unknown setting '{setting}'! "
                        f"Options are {list(setting_cases.keys())}.")
    case = int(case)
    if case not in setting_cases[setting]:
        raise DataError(f"Setting {setting} has no case {case}! "
                        f"Options are {setting_cases[setting]}.")
    if zi_level not in zi_levels:
        raise DataError(f"Unknown zero-inflation level '{zi_level}'! "
                        f"Options are {list(zi_levels.keys())}.")
    if setting != "III":
        if strength is None:
            raise DataError(f"Setting {setting} needs a signal strength!")
        strength = float(strength)
        if strength <= 1.0:
            raise DataError("The signal strength must exceed 1!")
    else:
        strength = None
    if seed is None:
        seed = new_seed()
    if marginals is None:
        marginals = load_fixture("statin42")
    lam = np.ones(marginals.shape)
    positions = signal_positions[case]
    for (i, j) in positions:
        if i >= marginals.n_rows-1 or j >= marginals.n_cols-1:
            raise DataError(f"Signal position ({i}, {j}) is outside the "
                            f"non-reference part of the exemplar table!")
    if setting == "I":
        values = [strength]*len(positions)
    elif setting == "II":
        half = len(positions)//2
        values = [setting2_fixed_strength]*half + \
            [strength]*(len(positions)-half)
    else:
        values = list(setting3_strengths)
    for (i, j), v in zip(positions, values):
        lam[i, j] = v
    signal_mask = lam > 1.0
    eligible = np.argwhere(marginals.non_reference_mask & ~signal_mask &
                           (lam == 1.0))
    n_zero = int(np.floor(zi_levels[zi_level]*len(eligible)+0.5))
    zero_mask = np.zeros(marginals.shape, dtype="bool")
    if n_zero > 0:
        pick = parse_prng(seed).choice(len(eligible), size=n_zero,
                                       replace=False)
        zero_mask[eligible[pick, 0], eligible[pick, 1]] = True
    params = {"setting": setting, "case": case, "strength": strength,
              "zi_level": zi_level}
    scenario = SimulationScenario(lam, zero_mask, marginals,
                                  signal_mask=signal_mask, perturb=perturb,
                                  replicates=replicates, seed=seed,
                                  params=params)
    if setting == "III":
        scenario.params["assigned_strengths"] = \
            [float(v) for v in setting3_strengths]
    mylog.debug(f"Built scenario {scenario.name} with {signal_mask.sum()} "
                f"signals and {n_zero} structural zeros.")
    return scenario


def generate_replicate(scenario, index):
    """
    Draw replicate *index* of a scenario: one multinomial table
    with the exemplar grand total and cell probabilities
    proportional to lambda * p_i. * p_.j. The draw depends only
    on the scenario seed and *index*.

    Returns
    -------
    A :class:`~pvebayes.tables.ContingencyTable`.
    """
    prng = replicate_prng(scenario.seed, index)
    lam = scenario.replicate_truth(index, prng=prng)
    p = scenario.cell_probabilities(lam)
    counts = prng.multinomial(scenario.grand_total, p.ravel())
    m = scenario.marginals
    return ContingencyTable(counts.reshape(scenario.shape),
                            row_labels=m.row_labels, col_labels=m.col_labels)


def _score_replicate(scenario, index, methods, options, e_estimators):
    table = generate_replicate(scenario, index)
    truth = scenario.replicate_truth(index)
    sig = truth > 1.0
    t_safe = np.where(truth > 0.0, truth, 1.0)
    out = {}
    for method in methods:
        spec = model_registry[method]
        try:
            fit, E = fit_model(method, table,
                               e_estimator=e_estimators.get(method),
                               **options.get(method, {}))
        except (DataError, NumericalError) as err:
            mylog.warning(f"Replicate {index}: the {method} fit failed "
                          f"and is excluded: {err}")
            out[method] = None
            continue
        if spec["lambda_posterior"]:
            post = fit.posterior(table, E)
            det = detect(post, fdr_adjust=spec["fdr_adjust"])
            w1 = np.where(sig, scaled_wasserstein(post, t_safe, p=1), np.nan)
            w2 = np.where(sig, scaled_wasserstein(post, t_safe, p=2), np.nan)
        else:
            det = detect(fit, fdr_adjust=spec["fdr_adjust"])
            w1 = w2 = None
        out[method] = (det.flags, w1, w2)
    return out


def _score_replicate_star(args):
    return _score_replicate(*args)


def run_study(scenario, methods, options=None, e_estimators=None,
              n_workers=1, show_progress=None):
    """
    Generate every replicate of a scenario, fit each method to it,
    flag signals and score the posteriors against the truth.

    Parameters
    ----------
    scenario : :class:`~pvebayes.simulate.SimulationScenario`
        The scenario.
    methods : list of strings
        Registered model names.
    options : dict, optional
        Model name -> dict of model options.
    e_estimators : dict, optional
        Model name -> expected-count estimator, overriding the
        model defaults.
    n_workers : integer, optional
        The number of worker processes. Results do not depend on
        it. Default: 1
    show_progress : boolean, optional
        Whether to show a progress bar. Default: the
        "show_progress" configuration value.

    Returns
    -------
    A dict of method name -> :class:`~pvebayes.evaluation.MetricReport`.
    """
    for method in methods:
        model_registry[method]
    if options is None:
        options = {}
    if e_estimators is None:
        e_estimators = {}
    M = scenario.replicates
    mylog.info(f"Running {M} replicates of {scenario.name} for "
               f"{', '.join(methods)}.")
    tasks = [(scenario, m, methods, options, e_estimators) for m in range(M)]
    pbar = get_pbar(M, f"Simulating {scenario.name}", show=show_progress)
    results = []
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            for res in ex.map(_score_replicate_star, tasks):
                results.append(res)
                pbar.update()
    else:
        for task in tasks:
            results.append(_score_replicate_star(task))
            pbar.update()
    pbar.close()
    reports = {}
    for method in methods:
        keep = [m for m in range(M) if results[m][method] is not None]
        n_excluded = M - len(keep)
        if len(keep) == 0:
            raise NumericalError(f"The {method} fit failed on every "
                                 f"replicate!")
        if n_excluded > 0:
            mylog.warning(f"{n_excluded} of {M} replicates were excluded "
                          f"for {method}.")
        flags = [results[m][method][0] for m in keep]
        truths = [scenario.replicate_truth(m) for m in keep]
        if model_registry[method]["lambda_posterior"]:
            w1 = [results[m][method][1] for m in keep]
            w2 = [results[m][method][2] for m in keep]
        else:
            w1 = w2 = None
        reports[method] = aggregate_metrics(w1, w2, truths, decisions=flags,
                                            n_excluded=n_excluded)
        mylog.info(f"{method}: {reports[method]!r}")
    return reports


def study_table(reports, scenario):
    """
    Tidy metric rows, one per (scenario, method, metric).
    """
    rows = []
    for method, report in reports.items():
        rows.extend(report.to_rows(scenario=scenario.name, method=method))
    return Table(rows=rows, names=["scenario", "method", "metric", "value"])


def run_e_estimator_study(strengths, replicates, seed, marginals=None):
    """
    Compare the two expected-count estimators on setting-I,
    case-1 data without zero inflation, sweeping the strength of
    the single signal.

    Parameters
    ----------
    strengths : list of floats
        The signal strengths to sweep.
    replicates : integer
        The number of replicates per strength.
    seed : integer
        The seed of the replicate streams.
    marginals : :class:`~pvebayes.tables.ContingencyTable`, optional
        The exemplar table. Default: the bundled statin-42 table.

    Returns
    -------
    An astropy Table with one row per strength and non-reference
    cell: the scaled RMSE of both estimators, their ratio, the
    cell class relative to the signal cell, and whether the
    sufficient condition for the reference estimator holds at
    the signal cell.
    """
    if marginals is None:
        marginals = load_fixture("statin42")
    E_true = np.asarray(expected_natural(marginals))
    si, sj = signal_positions[1][0]
    I, J = marginals.shape
    rows = []
    for s in strengths:
        scenario = build_setting("I", 1, strength=s, seed=seed,
                                 replicates=replicates, marginals=marginals)
        tables = [generate_replicate(scenario, m) for m in range(replicates)]
        rmse_nat = e_estimator_rmse(tables, E_true, "natural")
        rmse_ref = e_estimator_rmse(tables, E_true, "reference")
        mae_nat = e_estimator_rmse(tables, E_true, "natural", p=1)
        mae_ref = e_estimator_rmse(tables, E_true, "reference", p=1)
        inputs = AmseInputs(scenario.lambda_effective, scenario.p_row,
                            scenario.p_col, scenario.grand_total)
        holds = reference_advantage(inputs, si, sj).holds
        for i in range(I-1):
            for j in range(J-1):
                if (i, j) == (si, sj):
                    cls = "signal"
                elif i == si:
                    cls = "same row"
                elif j == sj:
                    cls = "same column"
                else:
                    cls = "other"
                rows.append((s, marginals.row_labels[i],
                             marginals.col_labels[j], cls,
                             rmse_nat[i, j], rmse_ref[i, j],
                             rmse_nat[i, j]/rmse_ref[i, j],
                             mae_nat[i, j], mae_ref[i, j], holds))
        mylog.info(f"Strength {s}: signal-cell RMSE ratio "
                   f"{rmse_nat[si, sj]/rmse_ref[si, sj]:.4f}.")
    return Table(rows=rows, names=["strength", "AE", "drug", "cell_class",
                                   "rmse_natural", "rmse_reference",
                                   "rmse_ratio", "mae_natural",
                                   "mae_reference", "condition_holds"])


def full_sweep():
    """
    Every scenario of the full simulation study: 63 from setting
    I, 21 from setting II and 1 from setting III, each with fixed
    and with perturbed truth.

    Returns
    -------
    A list of dicts of :func:`~pvebayes.simulate.build_setting`
    keyword arguments.
    """
    out = []
    for perturb in [False, True]:
        for setting in ["I", "II"]:
            for case in setting_cases[setting]:
                for strength in signal_strengths:
                    for zi in zi_levels:
                        out.append({"setting": setting, "case": case,
                                    "strength": strength, "zi_level": zi,
                                    "perturb": perturb})
        out.append({"setting": "III", "case": 5, "strength": None,
                    "zi_level": "none", "perturb": perturb})
    return out


def load_scenarios(filename):
    """
    Read a list of scenario definitions from a YAML file. The
    file holds either a list of mappings or a mapping with a
    "scenarios" list and optional shared "defaults".
    """
    if not os.path.exists(filename):
        filename = os.path.join(pvebayes_files_path, filename)
    with open(filename, "r") as f:
        d = yaml.safe_load(f)
    defaults = {}
    if isinstance(d, dict):
        defaults = d.get("defaults", {})
        d = d.get("scenarios", [])
    if not isinstance(d, list):
        raise DataError(f"The scenario file {filename} must hold a list "
                        f"of scenarios!")
    out = []
    for item in d:
        s = dict(defaults)
        s.update(item)
        out.append(s)
    return out
