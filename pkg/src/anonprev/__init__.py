"""Bayesian spatial prevalence modeling under jittered or geomasked locations."""

from .errors import ConfigError, DataError, NumericError, ParseError
from .grid import (
    FineGrid,
    Raster,
    TransformSpec,
    build_fine_grid,
    cell_at,
    load_ascii_grid,
    nearest_populated_cell,
    write_ascii_grid,
)
from .inference import (
    McmcConfig,
    PosteriorSamples,
    aggregate,
    fit,
    predict_risk,
    predictive_cluster_draws,
    read_samples_csv,
    write_samples_csv,
)
from .integration import (
    IntegrationScheme,
    build_geomask_scheme,
    build_jitter_scheme,
    scheme_from_json,
    scheme_to_json,
    single_cell_scheme,
    transform_points,
    weighted_pam,
)
from .model import (
    APPROACHES,
    ClusterRecord,
    LatentField,
    ModelParams,
    attach_schemes,
    cluster_log_lik,
    eta_cells,
    joint_log_posterior,
    linear_predictor,
    read_clusters_csv,
    write_clusters_csv,
)
from .positional import (
    AnonymizationModel,
    geomask_log_density,
    jitter_log_density,
    sample_anonymized,
)
from .priors import (
    PCPhiPrior,
    PCPrecisionPrior,
    PriorSet,
    StructuredPrecision,
    default_priors,
    pc_phi_cdf,
    pc_phi_kld,
    pc_phi_log_density,
    pc_precision_log_density,
    pc_variance_log_density,
    sample_structured,
    scaled_structured_precision,
    solve_lambda_phi,
    structured_log_density,
)
from .scoring import (
    FoldPlan,
    PredictiveSample,
    aggregate_scores,
    crps,
    diff_distribution,
    direct_estimate,
    fuzzy_coverage,
    fuzzy_width,
    interval_score,
    make_folds,
    mse,
    precision_weighted_combine,
)
from .simulate import (
    SimulationConfig,
    SimulatedWorld,
    simulate_survey,
    simulate_world,
    true_areal_prevalence,
)

__version__ = "0.1.0"
