import numpy as np

# Reference labels of the bundled statin tables
statin_reference_row = "Other Pt"
statin_reference_col = "Other"

statin_fixtures = {"statin46": "statin46.csv",
                   "statin42": "statin42.csv"}

# Hyperparameters of the near-zero component of the 2-gamma-zi prior
zi_alpha = 0.01
zi_beta = 100.0

# Flat default start of the 2-gamma optimizer:
# alpha1, beta1, alpha2, beta2, omega
mgps_default_start = (0.2, 0.1, 2.0, 4.0, 1.0/3.0)

# Floors used when converting cluster moments to gamma parameters
min_gamma_shape = 1.0e-3
min_gamma_var = 1.0e-8

general_gamma_alphas = [0.01, 0.25, 0.5, 0.75, 0.99]
statin_alphas = [0.01, 0.5, 0.75, 0.99]

# Zero-inflation levels of the simulation study
zi_levels = {"none": 0.0, "0.25": 0.25, "0.5": 0.5}

# Signal strengths swept in settings I and II
signal_strengths = [1.2, 1.4, 1.6, 2.0, 2.5, 3.0, 4.0]

# Fixed strength of half of the setting-II signals
setting2_fixed_strength = 2.0

# Signal cells (0-based row, column) of the statin-42 simulation design
signal_positions = {
    1: [(0, 0)],
    2: [(0, 0), (6, 0), (8, 0)],
    3: [(0, 0), (6, 0), (8, 0), (28, 4), (37, 4), (38, 4)],
    5: [(0, 0), (8, 4), (8, 0), (0, 3), (24, 0), (28, 0),
        (28, 4), (37, 4), (38, 4), (38, 0), (40, 0), (28, 5)],
}
signal_positions[4] = signal_positions[3]

setting_cases = {"I": [1, 2, 3], "II": [4], "III": [5]}

# Strengths of the twelve setting-III signals, in position order
setting3_strengths = np.round(np.linspace(1.2, 3.4, 12), 1)

# Truncated-normal perturbation of the true signal strengths
perturb_sd = 0.05
perturb_bounds_nonsignal = (-0.4, 0.0)
perturb_bounds_signal = (-0.2, 0.2)

# Largest n for which digamma differences are summed exactly
exact_digamma_max_n = 20

# Memory cap for the cached KM likelihood matrix, in bytes
km_cache_bytes = 2 * 1024**3

# Step halvings allowed in one line search of the Efron fit, and the
# number of optimizer passes spent tightening its stopping tolerance
efron_max_halvings = 60
efron_max_passes = 4
