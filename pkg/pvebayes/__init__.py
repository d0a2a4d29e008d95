from pvebayes.tables import \
    ContingencyTable, \
    ExpectedCounts, \
    AmseInputs, \
    ingest_csv, \
    load_fixture, \
    expected_natural, \
    expected_reference, \
    get_expected, \
    amse_natural, \
    amse_reference, \
    reference_advantage, \
    reference_advantage_threshold

from pvebayes.mixture import \
    GammaMixturePrior, \
    DiscretePrior, \
    GammaMixturePosterior, \
    DiscretePosterior, \
    PriorFit, \
    nb_log_pmf, \
    posterior_gamma_mixture, \
    posterior_discrete, \
    prob_signal, \
    posterior_quantile, \
    posterior_density, \
    summarize_posterior

from pvebayes.general_gamma import \
    EcmConfig, \
    fit_ecm, \
    fit_k_gamma, \
    select_alpha

from pvebayes.km import \
    KmConfig, \
    fit_km, \
    km_objective

from pvebayes.efron import \
    EfronConfig, \
    fit_efron

from pvebayes.mgps import \
    MgpsConfig, \
    MgpsParams, \
    ZiComponentSpec, \
    fit_mgps

from pvebayes.baselines import \
    fit_single_gamma, \
    fit_bcpnn, \
    fdr_adjust

from pvebayes.evaluation import \
    detect, \
    replication_fdr_sensitivity, \
    scaled_wasserstein, \
    aggregate_metrics, \
    e_estimator_rmse, \
    forest_summary, \
    signal_count_table

from pvebayes.model_registry import \
    model_registry, \
    fit_model, \
    show_model_registry

from pvebayes.simulate import \
    SimulationScenario, \
    build_setting, \
    generate_replicate, \
    run_study, \
    study_table, \
    run_e_estimator_study, \
    full_sweep, \
    load_scenarios

from pvebayes.utils import \
    set_pvebayes_config, \
    DataError, \
    NumericalError

__version__ = "0.1.0"
