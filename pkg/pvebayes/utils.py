import os
import logging
import warnings
from numpy.random import RandomState, SeedSequence, MT19937
from configparser import ConfigParser
import appdirs

# Configuration

pvebayes_cfg_defaults = {"signal_epsilon": "0.001",
                         "signal_threshold": "0.95",
                         "fdr_level": "0.05",
                         "zero_threshold": "0.05",
                         "single_gamma_alpha": "0.5",
                         "log_level": "INFO",
                         "show_progress": "True"}

CONFIG_DIR = os.environ.get('XDG_CONFIG_HOME',
                            appdirs.user_config_dir())
CONFIG_DIR = os.path.join(CONFIG_DIR, 'pvebayes')
if not os.path.exists(CONFIG_DIR):
    try:
        os.makedirs(CONFIG_DIR)
    except OSError:
        warnings.warn("unable to create pvebayes config directory")

CURRENT_CONFIG_FILE = os.path.join(CONFIG_DIR, 'pvebayes.cfg')

if not os.path.exists(CURRENT_CONFIG_FILE):
    cp = ConfigParser()
    cp.add_section("pvebayes")
    try:
        with open(CURRENT_CONFIG_FILE, 'w') as new_cfg:
            cp.write(new_cfg)
    except IOError:
        warnings.warn("unable to write new config file")


pvebayes_cfg = ConfigParser(pvebayes_cfg_defaults)
pvebayes_cfg.read([CURRENT_CONFIG_FILE, 'pvebayes.cfg'])
if not pvebayes_cfg.has_section("pvebayes"):
    pvebayes_cfg.add_section("pvebayes")

# Logging

pvebayesLogger = logging.getLogger("pvebayes")

ufstring = "%(name)-3s : [%(levelname)-9s] %(asctime)s %(message)s"

pvebayes_sh = logging.StreamHandler()
# create formatter and add it to the handlers
formatter = logging.Formatter(ufstring)
pvebayes_sh.setFormatter(formatter)
# add the handler to the logger
pvebayesLogger.addHandler(pvebayes_sh)
pvebayesLogger.propagate = False

mylog = pvebayesLogger

mylog.setLevel(pvebayes_cfg.get("pvebayes", "log_level").upper())


# Errors


class DataError(ValueError):
    """
    Raised when input data (a contingency table, a posterior file,
    or a scenario description) is malformed or violates a precondition.
    """
    pass


class NumericalError(RuntimeError):
    """
    Raised when a computation fails numerically: underflowing
    posteriors, non-finite likelihoods, or a broken ascent property.
    """
    pass


pvebayes_path = os.path.abspath(os.path.dirname(__file__))
pvebayes_files_path = os.path.join(pvebayes_path, "files")


def get_pvebayes_config(option, dtype=float):
    """
    Get a pvebayes configuration value.

    Parameters
    ----------
    option : string
        The option to read.
    dtype : type, optional
        The type to convert the value to. Booleans are
        parsed with the usual ConfigParser rules.
        Default: float
    """
    if dtype is bool:
        return pvebayes_cfg.getboolean("pvebayes", option)
    return dtype(pvebayes_cfg.get("pvebayes", option))


def set_pvebayes_config(option, value):
    """
    Set pvebayes configuration values.

    Parameters
    ----------
    option : string
        The option to change.
    value : number or string
        The value to set the option to.
    """
    if option not in pvebayes_cfg_defaults:
        raise KeyError(f"'{option}' is not a pvebayes configuration option!")
    pvebayes_cfg.set("pvebayes", option, value=str(value))
    if option == "log_level":
        mylog.setLevel(str(value).upper())


def resolve_option(value, option):
    """
    Return *value*, or the configured default for *option*
    when *value* is None.
    """
    if value is None:
        return get_pvebayes_config(option)
    return value


def parse_prng(prng):
    if isinstance(prng, RandomState):
        return prng
    else:
        return RandomState(prng)


def new_seed():
    """
    A fresh random seed, for runs that were not given one.
    """
    return int(SeedSequence().entropy % 2**32)


def replicate_prng(seed, index):
    """
    The random number generator for replicate *index* of a run
    seeded with *seed*.
    """
    return RandomState(MT19937(SeedSequence([seed, index])))


class DummyPbar:
    def __init__(self, *args, **kwargs):
        pass

    def update(self, *args, **kwargs):
        pass

    def close(self):
        pass


def get_pbar(total, desc, show=None):
    from tqdm.auto import tqdm
    if show is None:
        show = get_pvebayes_config("show_progress", bool)
    if show:
        return tqdm(total=total, desc=desc, leave=True)
    return DummyPbar()


def check_file_location(fn, overwrite):
    if os.path.exists(fn) and not overwrite:
        raise IOError(f"File {fn} exists and overwrite=False!")
