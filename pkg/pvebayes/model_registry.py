from pvebayes.baselines import fit_single_gamma, fit_bcpnn
from pvebayes.efron import EfronConfig, fit_efron
from pvebayes.general_gamma import EcmConfig, fit_ecm, fit_k_gamma
from pvebayes.km import KmConfig, fit_km
from pvebayes.mgps import MgpsConfig, ZiComponentSpec, fit_mgps
from pvebayes.tables import get_expected
from pvebayes.utils import mylog

# The Model Registry


class ModelRegistry:
    def __init__(self):
        self.registry = {}

    def __getitem__(self, key):
        if key not in self.registry:
            raise KeyError(f"Model '{key}' not in the model registry! "
                           f"Options are {list(self.registry.keys())}.")
        return self.registry[key]

    def __setitem__(self, key, value):
        self.registry[key] = value

    def keys(self):
        return self.registry.keys()

    def items(self):
        return self.registry.items()

    def __contains__(self, item):
        return item in self.registry

    def get(self, key, default=None):
        return self.registry.get(key, default)


model_registry = ModelRegistry()


def _general_gamma(table, E, alpha=0.75, K_init=100, seed=None):
    return fit_ecm(table, E, EcmConfig(K_init=K_init, dirichlet_alpha=alpha,
                                       seed=seed))


def _k_gamma(table, E, k=2, seed=None):
    return fit_k_gamma(table, E, k, EcmConfig(seed=seed))


def _km(table, E, K=None, seed=None):
    return fit_km(table, E, KmConfig(K=K, seed=seed))


def _efron(table, E, K=None, p=120, c0=0.01, seed=None):
    return fit_efron(table, E, EfronConfig(K=K, p=p, c0=c0, seed=seed))


def _two_gamma(table, E):
    return fit_mgps(table, E, variant="two_gamma", config=MgpsConfig())


def _two_gamma_zi(table, E, alpha_zi=None, beta_zi=None):
    kw = {k: v for k, v in [("alpha_zi", alpha_zi), ("beta_zi", beta_zi)]
          if v is not None}
    return fit_mgps(table, E, variant="two_gamma_zi",
                    zi_spec=ZiComponentSpec(**kw), config=MgpsConfig())


def _single_gamma(table, E, alpha=None):
    return fit_single_gamma(table, E, alpha=alpha)


def _bcpnn(table, E):
    return fit_bcpnn(table)


# Each entry: the fitting function, the default expected-count
# estimator, whether detection uses the false discovery adjustment,
# whether the result is a posterior on lambda, and the options the
# fitting function accepts.

model_registry["general-gamma"] = {"fit": _general_gamma,
                                   "e_estimator": "reference",
                                   "fdr_adjust": False,
                                   "lambda_posterior": True,
                                   "options": {"alpha", "K_init", "seed"}}

model_registry["k-gamma"] = {"fit": _k_gamma,
                             "e_estimator": "natural",
                             "fdr_adjust": False,
                             "lambda_posterior": True,
                             "options": {"k", "seed"}}

model_registry["km"] = {"fit": _km,
                        "e_estimator": "reference",
                        "fdr_adjust": False,
                        "lambda_posterior": True,
                        "options": {"K", "seed"}}

model_registry["efron"] = {"fit": _efron,
                           "e_estimator": "reference",
                           "fdr_adjust": False,
                           "lambda_posterior": True,
                           "options": {"K", "p", "c0", "seed"}}

model_registry["2-gamma"] = {"fit": _two_gamma,
                             "e_estimator": "natural",
                             "fdr_adjust": False,
                             "lambda_posterior": True,
                             "options": set()}

model_registry["2-gamma-zi"] = {"fit": _two_gamma_zi,
                                "e_estimator": "natural",
                                "fdr_adjust": False,
                                "lambda_posterior": True,
                                "options": {"alpha_zi", "beta_zi"}}

model_registry["single-gamma"] = {"fit": _single_gamma,
                                  "e_estimator": "natural",
                                  "fdr_adjust": True,
                                  "lambda_posterior": True,
                                  "options": {"alpha"}}

model_registry["bcpnn"] = {"fit": _bcpnn,
                           "e_estimator": "natural",
                           "fdr_adjust": True,
                           "lambda_posterior": False,
                           "options": set()}


def fit_model(name, table, e_estimator=None, **options):
    """
    Fit one of the registered models to a table.

    Parameters
    ----------
    name : string
        The model name, e.g. "general-gamma", "km", "bcpnn".
    table : :class:`~pvebayes.tables.ContingencyTable`
        The report counts.
    e_estimator : string, optional
        "natural" or "reference". Default: the model's default,
        "reference" for general-gamma, KM and Efron and "natural"
        for the others.
    **options
        Model-specific options. Options set to None are dropped.

    Returns
    -------
    The fit result and the expected counts it was fitted with.
    """
    spec = model_registry[name]
    options = {k: v for k, v in options.items() if v is not None}
    bad = set(options) - spec["options"]
    if bad:
        raise ValueError(f"Options {sorted(bad)} do not apply to the "
                         f"'{name}' model!")
    if e_estimator is None:
        e_estimator = spec["e_estimator"]
    E = get_expected(table, e_estimator)
    mylog.info(f"Fitting the '{name}' model with the {e_estimator} "
               f"expected-count estimator.")
    return spec["fit"](table, E, **options), E


def show_model_registry():
    """
    Print the registered models and their defaults.
    """
    for name, spec in model_registry.items():
        print(f"{name}: e_estimator = {spec['e_estimator']}, "
              f"fdr_adjust = {spec['fdr_adjust']}, "
              f"options = {sorted(spec['options'])}")
