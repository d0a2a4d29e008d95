"""
The ``pvebayes`` command-line interface: fit priors, flag signals,
simulate tables, run replication studies and compare the
expected-count estimators.
"""
import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np
from astropy.io import ascii
from astropy.table import Table

from pvebayes.evaluation import detect, signal_count_table
from pvebayes.mixture import PriorFit
from pvebayes.model_registry import model_registry, fit_model
from pvebayes.simulate import SimulationScenario, \
    generate_replicate, run_study, study_table, run_e_estimator_study, \
    load_scenarios
from pvebayes.tables import ContingencyTable, AmseInputs, load_fixture, \
    get_expected, amse_natural, amse_reference, reference_advantage
from pvebayes.utils import mylog, DataError, NumericalError, \
    check_file_location

exit_ok = 0
exit_usage = 2
exit_data = 3
exit_numerical = 4


def _version():
    from pvebayes import __version__
    return __version__


def _sha256_file(filename):
    h = hashlib.sha256()
    with open(filename, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    """
    The record written next to the outputs of every command: the
    command, a hash of its canonical arguments, the seed, the
    checksums of the input files, the package version and the wall
    time of every stage.
    """
    def __init__(self, command, args, seed=None):
        self.command = command
        args = {k: v for k, v in args.items() if not callable(v)}
        canonical = json.dumps(args, sort_keys=True, default=str)
        self.args = json.loads(canonical)
        self.config_hash = hashlib.sha256(canonical.encode()).hexdigest()
        self.seed = seed
        self.inputs = {}
        self.stages = {}
        self.version = _version()

    def add_input(self, filename):
        self.inputs[os.path.basename(filename)] = _sha256_file(filename)

    def stage(self, name, t0):
        self.stages[name] = time.perf_counter()-t0

    def to_dict(self):
        return {"command": self.command, "args": self.args,
                "config_hash": self.config_hash, "seed": self.seed,
                "inputs": self.inputs, "version": self.version,
                "wall_time": self.stages}

    def write_json(self, filename, overwrite=False):
        check_file_location(filename, overwrite)
        with open(filename, "w") as f:
            json.dump(self.to_dict(), f, indent=4)


def _write_table(t, filename, overwrite):
    check_file_location(filename, overwrite)
    t.write(filename, format="ascii.csv", overwrite=True)


def _read_table(args, manifest):
    if args.input is not None:
        if not os.path.exists(args.input):
            raise FileNotFoundError(f"Input file {args.input} not found!")
        manifest.add_input(args.input)
        return ContingencyTable.from_file(args.input,
                                          reference_row=args.reference_row,
                                          reference_col=args.reference_col)
    return load_fixture(args.fixture)


def _parse_cell(s):
    try:
        i, j = [int(v) for v in s.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected a cell as 'i,j', "
                                         f"got '{s}'!")
    if i < 1 or j < 1:
        raise argparse.ArgumentTypeError("Cell indices start at 1!")
    return i-1, j-1


def _parse_list(s, dtype=str):
    return [dtype(v) for v in s.split(",") if v.strip()]


def _alpha(s):
    if s == "auto":
        return s
    return float(s)


def _model_options(args, parser):
    spec = model_registry[args.model]
    given = {"alpha": args.alpha, "K_init": args.K_init, "k": args.k,
             "K": args.K, "p": args.p, "c0": args.c0,
             "alpha_zi": args.alpha_zi, "beta_zi": args.beta_zi}
    given = {k: v for k, v in given.items() if v is not None}
    bad = set(given) - spec["options"]
    if bad:
        parser.error(f"Options {sorted(bad)} do not apply to the "
                     f"'{args.model}' model!")
    if args.alpha == "auto" and args.model != "general-gamma":
        parser.error("--alpha auto only applies to the general-gamma model!")
    if args.model == "general-gamma" and "alpha" not in given:
        given["alpha"] = "auto"
    if "seed" in spec["options"] and args.seed is not None:
        given["seed"] = args.seed
    return given


def cmd_fit(args, parser):
    manifest = RunManifest("fit", vars(args), seed=args.seed)
    options = _model_options(args, parser)
    t0 = time.perf_counter()
    table = _read_table(args, manifest)
    manifest.stage("read", t0)
    t0 = time.perf_counter()
    fit, E = fit_model(args.model, table, e_estimator=args.e_estimator,
                       **options)
    manifest.stage("fit", t0)
    prefix = args.out or args.model
    t0 = time.perf_counter()
    if isinstance(fit, PriorFit):
        fit.meta["e_estimator"] = E.kind
        fit.write_json(f"{prefix}_fit.json", overwrite=args.overwrite)
        post = fit.posterior_table(table, E, epsilon=args.epsilon)
    else:
        d = fit.to_dict()
        d["e_estimator"] = E.kind
        check_file_location(f"{prefix}_fit.json", args.overwrite)
        with open(f"{prefix}_fit.json", "w") as f:
            json.dump(d, f, indent=4)
        post = Table()
        I, J = table.shape
        post["AE"] = np.repeat(table.row_labels, J)
        post["drug"] = np.tile(table.col_labels, I)
        post["N"] = table.counts.ravel()
        post["E"] = np.asarray(E).ravel()
        post["reference"] = ~table.non_reference_mask.ravel()
        post["ic_mean"] = fit.ic_mean.ravel()
        post["ic_var"] = fit.ic_var.ravel()
        post["prob_signal"] = fit.prob_signal(args.epsilon).ravel()
    _write_table(post, f"{prefix}_posterior.csv", args.overwrite)
    manifest.stage("write", t0)
    manifest.write_json(f"{prefix}_manifest.json", overwrite=args.overwrite)
    print(f"Fitted the {args.model} model to a {table.n_rows} x "
          f"{table.n_cols} table; wrote {prefix}_fit.json and "
          f"{prefix}_posterior.csv.")
    return exit_ok


def _grid_from_posterior_table(t):
    for col in ["AE", "drug", "prob_signal"]:
        if col not in t.colnames:
            raise DataError(f"The posterior file has no '{col}' column!")
    aes = list(dict.fromkeys(str(v) for v in t["AE"]))
    drugs = list(dict.fromkeys(str(v) for v in t["drug"]))
    if len(t) != len(aes)*len(drugs):
        raise DataError("The posterior file does not cover every "
                        "AE-drug pair exactly once!")
    prob = np.asarray(t["prob_signal"], dtype="float64")
    if np.any(~np.isfinite(prob)) or np.any((prob < 0.0) | (prob > 1.0)):
        raise DataError("The posterior file holds invalid probabilities!")
    return prob.reshape(len(aes), len(drugs)), aes, drugs


class _CellLabels:
    def __init__(self, row_labels, col_labels):
        self.row_labels = row_labels
        self.col_labels = col_labels
        self.shape = (len(row_labels), len(col_labels))


def cmd_detect(args, parser):
    manifest = RunManifest("detect", vars(args))
    if not os.path.exists(args.posteriors):
        raise FileNotFoundError(f"Posterior file {args.posteriors} "
                                f"not found!")
    manifest.add_input(args.posteriors)
    t0 = time.perf_counter()
    try:
        t = ascii.read(args.posteriors, format="csv", guess=False)
    except Exception as err:
        raise DataError(f"Cannot read {args.posteriors}: {err}")
    prob, aes, drugs = _grid_from_posterior_table(t)
    table = None
    if args.fit is not None:
        if args.input is None and args.fixture is None:
            parser.error("--fit needs --input or --fixture!")
        manifest.add_input(args.fit)
        fit = PriorFit.from_file(args.fit)
        table = _read_table(args, manifest)
        if table.shape != prob.shape:
            raise DataError(f"The posterior file holds a {prob.shape} "
                            f"grid but the table is {table.shape}!")
        E = get_expected(table, fit.meta.get("e_estimator", "reference"))
        prob = fit.posterior(table, E).prob_signal(args.epsilon)
    elif args.epsilon is not None:
        parser.error("--epsilon needs --fit, since the posterior file "
                     "only holds signal probabilities!")
    manifest.stage("read", t0)
    res = detect(prob, threshold=args.threshold, epsilon=args.epsilon,
                 fdr_adjust=args.fdr_adjust, fdr_level=args.fdr_level)
    if table is None:
        table = _CellLabels(aes, drugs)
    prefix = args.out or "detect"
    _write_table(res.to_table(table), f"{prefix}_decisions.csv",
                 args.overwrite)
    counts = signal_count_table({args.method_label: res}, table)
    _write_table(counts, f"{prefix}_counts.csv", args.overwrite)
    manifest.write_json(f"{prefix}_manifest.json", overwrite=args.overwrite)
    for drug, n in res.counts_per_drug(table).items():
        print(f"{drug}: {n}")
    return exit_ok


def _scenarios_from_args(args, parser):
    if args.scenario is not None:
        items = load_scenarios(args.scenario)
    else:
        if args.setting is None or args.case is None:
            parser.error("Give --scenario or --setting and --case!")
        items = [{"setting": args.setting, "case": args.case,
                  "strength": args.strength, "zi_level": args.zi,
                  "perturb": args.perturb}]
    out = []
    for item in items:
        item = dict(item)
        if args.replicates is not None:
            item["replicates"] = args.replicates
        if args.seed is not None:
            item["seed"] = args.seed
        out.append((item, SimulationScenario.from_dict(item)))
    return out


def cmd_simulate(args, parser):
    manifest = RunManifest("simulate", vars(args), seed=args.seed)
    if args.scenario is not None and os.path.exists(args.scenario):
        manifest.add_input(args.scenario)
    prefix = args.out or "simulate"
    t0 = time.perf_counter()
    for item, scenario in _scenarios_from_args(args, parser):
        scenario.write_yaml(f"{prefix}_{scenario.name}.yaml",
                            overwrite=args.overwrite)
        for m in range(scenario.replicates):
            table = generate_replicate(scenario, m)
            table.write_file(f"{prefix}_{scenario.name}_rep{m:04d}.csv",
                             overwrite=args.overwrite)
        print(f"Wrote {scenario.replicates} replicates of {scenario.name}.")
    manifest.stage("simulate", t0)
    manifest.write_json(f"{prefix}_manifest.json", overwrite=args.overwrite)
    return exit_ok


def cmd_evaluate(args, parser):
    manifest = RunManifest("evaluate", vars(args), seed=args.seed)
    prefix = args.out or "evaluate"
    if args.e_study:
        strengths = _parse_list(args.strengths, float)
        t0 = time.perf_counter()
        seed = 0 if args.seed is None else args.seed
        t = run_e_estimator_study(strengths, args.replicates or 1000, seed)
        manifest.stage("e_study", t0)
        _write_table(t, f"{prefix}_e_estimators.csv", args.overwrite)
        manifest.write_json(f"{prefix}_manifest.json",
                            overwrite=args.overwrite)
        sig = t[t["cell_class"] == "signal"]
        for row in sig:
            print(f"lambda = {row['strength']}: RMSE ratio "
                  f"{row['rmse_ratio']:.4f}, condition holds: "
                  f"{row['condition_holds']}")
        return exit_ok
    methods = _parse_list(args.methods)
    for method in methods:
        if method not in model_registry:
            parser.error(f"Unknown method '{method}'! Options are "
                         f"{list(model_registry.keys())}.")
    if args.scenario is not None and os.path.exists(args.scenario):
        manifest.add_input(args.scenario)
    tables = []
    for item, scenario in _scenarios_from_args(args, parser):
        options = item.get("options", {})
        e_est = item.get("e_estimator")
        if isinstance(e_est, str):
            e_est = {m: e_est for m in methods}
        t0 = time.perf_counter()
        reports = run_study(scenario, methods, options=options,
                            e_estimators=e_est,
                            n_workers=args.threads)
        manifest.stage(scenario.name, t0)
        tables.append(study_table(reports, scenario))
        for method, report in reports.items():
            print(f"{scenario.name} {method}: FDR = {report.fdr:.4f}, "
                  f"sensitivity = {report.sensitivity:.4f}, "
                  f"Max-Scaled-RMSE = {report.max_scaled_w2:.4f}")
    from astropy.table import vstack
    _write_table(vstack(tables), f"{prefix}_metrics.csv", args.overwrite)
    manifest.write_json(f"{prefix}_manifest.json", overwrite=args.overwrite)
    return exit_ok


def cmd_amse(args, parser):
    scenarios = _scenarios_from_args(args, parser)
    if len(scenarios) != 1:
        parser.error("amse needs exactly one scenario!")
    scenario = scenarios[0][1]
    i, j = args.cell
    I, J = scenario.shape
    if i >= I or j >= J:
        parser.error(f"Cell ({i+1}, {j+1}) is outside the {I} x {J} table!")
    inputs = AmseInputs(scenario.lambda_effective, scenario.p_row,
                        scenario.p_col, scenario.grand_total)
    nat = amse_natural(inputs, i, j)
    ref = amse_reference(inputs, i, j)
    res = reference_advantage(inputs, i, j)
    print(f"cell ({i+1}, {j+1}) of {scenario.name}")
    print(f"amse_natural   = {nat:.6g}")
    print(f"amse_reference = {ref:.6g}")
    print(f"condition holds = {res.holds} (A = {res.A:.6g}, "
          f"B = {res.B:.6g}, x = {res.x:.6g})")
    return exit_ok


def _add_table_args(p, required=False):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--input", type=str,
                   help="A CSV file with AE labels in the first column "
                        "and drug labels in the first row.")
    g.add_argument("--fixture", type=str, choices=["statin46", "statin42"],
                   help="Use a bundled table instead of --input.")
    p.add_argument("--reference-row", type=str,
                   help="The label of the reference AE. Default: the last "
                        "row.")
    p.add_argument("--reference-col", type=str,
                   help="The label of the reference drug. Default: the "
                        "last column.")


def _add_scenario_args(p):
    p.add_argument("--scenario", type=str,
                   help="A YAML file with one or more scenarios.")
    p.add_argument("--setting", type=str, choices=["I", "II", "III"])
    p.add_argument("--case", type=int)
    p.add_argument("--strength", type=float)
    p.add_argument("--zi", type=str, default="none",
                   choices=["none", "0.25", "0.5"])
    p.add_argument("--perturb", action="store_true",
                   help="Perturb the true signal strengths per replicate.")
    p.add_argument("--replicates", type=int)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pvebayes", allow_abbrev=False,
        description="Empirical Bayes signal detection and signal strength "
                    "estimation for AE-drug report tables.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {_version()}")
    common = argparse.ArgumentParser(add_help=False)
    verb = common.add_mutually_exclusive_group()
    verb.add_argument("--verbose", action="store_true",
                      help="Log debugging messages.")
    verb.add_argument("--quiet", action="store_true",
                      help="Only log warnings and errors.")
    common.add_argument("--seed", type=int, help="The random seed.")
    common.add_argument("--out", type=str,
                        help="The prefix of the output files.")
    common.add_argument("--overwrite", action="store_true",
                        help="Overwrite existing files with the same name.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], allow_abbrev=False,
                       help="Fit a prior and write per-cell posteriors.")
    p.add_argument("--model", type=str, required=True,
                   choices=list(model_registry.keys()))
    _add_table_args(p, required=True)
    p.add_argument("--e-estimator", type=str,
                   choices=["natural", "reference"],
                   help="Default: reference for general-gamma, km and "
                        "efron, natural otherwise.")
    p.add_argument("--alpha", type=_alpha,
                   help="Dirichlet concentration (general-gamma, or "
                        "'auto'), or the single-gamma prior parameter.")
    p.add_argument("--K-init", type=int, dest="K_init",
                   help="Initial number of general-gamma components.")
    p.add_argument("--k", type=int, help="Components of the k-gamma model.")
    p.add_argument("--K", type=int, help="Grid size of km and efron.")
    p.add_argument("--p", type=int, help="Spline degrees of freedom (efron).")
    p.add_argument("--c0", type=float, help="Penalty weight (efron).")
    p.add_argument("--alpha-zi", type=float, dest="alpha_zi")
    p.add_argument("--beta-zi", type=float, dest="beta_zi")
    p.add_argument("--epsilon", type=float,
                   help="Signal margin of the reported probabilities. "
                        "Default: 0.001")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("detect", parents=[common], allow_abbrev=False,
                       help="Flag signals from a posterior file.")
    p.add_argument("--posteriors", type=str, required=True)
    p.add_argument("--fit", type=str,
                   help="A fit JSON file, to recompute the posteriors "
                        "with another --epsilon.")
    _add_table_args(p)
    p.add_argument("--threshold", type=float,
                   help="Posterior probability threshold. Default: 0.95")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--fdr-adjust", action="store_true",
                   help="Select signals by the posterior false "
                        "discovery adjustment.")
    p.add_argument("--fdr-level", type=float)
    p.add_argument("--method-label", type=str, default="method")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("simulate", parents=[common], allow_abbrev=False,
                       help="Write replicated simulated tables.")
    _add_scenario_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", parents=[common], allow_abbrev=False,
                       help="Run replication studies.")
    _add_scenario_args(p)
    p.add_argument("--methods", type=str,
                   default="general-gamma,km,efron",
                   help="Comma-separated model names.")
    p.add_argument("--threads", type=int, default=1,
                   help="Worker processes. Results do not depend on it.")
    p.add_argument("--e-study", action="store_true",
                   help="Compare the expected-count estimators instead.")
    p.add_argument("--strengths", type=str, default="2,4,6,8,10")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("amse", parents=[common], allow_abbrev=False,
                       help="Asymptotic MSEs of the expected-count "
                            "estimators at one cell.")
    _add_scenario_args(p)
    p.add_argument("--cell", type=_parse_cell, required=True,
                   help="1-based 'row,column'.")
    p.set_defaults(func=cmd_amse)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code
    if args.verbose:
        mylog.setLevel("DEBUG")
    elif args.quiet:
        mylog.setLevel("WARNING")
    try:
        return args.func(args, parser)
    except SystemExit as err:
        return err.code
    except (DataError, OSError) as err:
        mylog.error(str(err))
        print(f"error: {err}", file=sys.stderr)
        return exit_data
    except NumericalError as err:
        mylog.error(str(err))
        print(f"error: {err}", file=sys.stderr)
        return exit_numerical
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return exit_usage
