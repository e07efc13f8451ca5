"""Mass-based clustering with isolation kernels.

The library estimates how much probability mass surrounds a point relative
to a cluster by averaging isolation-kernel similarities, and clusters by
maximizing the total own-cluster mass. The same pipeline instantiated with a
Nystrom-approximated Gaussian kernel gives the density-based twin, so the
two similarity notions can be compared like for like.

Modules: data (datasets, CSV, synthetic generators), kernels (isolation and
Gaussian kernel models), massdist (mean maps, mass, the objective),
clustering (the three-step algorithm and grid search), metrics (F1, AMI),
analysis (cohesiveness curves, failure diagnostics, correction curves,
scaling), cli (the masscluster command).
"""

__version__ = "0.1.0"

from .analysis import (
    CohesivenessCurve,
    ConditionOneReport,
    ConditionTwoReport,
    CorrectionCurve,
    ScaleReport,
    check_condition_one,
    check_condition_two,
    cohesiveness_curve,
    correction_curve,
    scaleup,
    spearman,
)
from .clustering import (
    ClusterAssignment,
    ClusterParams,
    GridSearchResult,
    ParamGrid,
    SeedClusters,
    assign_by_mass,
    default_dmc_grid,
    default_mmc_grid,
    grid_search,
    refine,
    run_dmc,
    run_mmc,
    seed_components,
)
from .data import (
    SYNTHETIC_FAMILIES,
    Dataset,
    SampleSet,
    generate_synthetic,
    load_csv,
    normalize_minmax,
    rng_from,
    save_csv,
    subsample,
)
from .errors import (
    AlgorithmError,
    ConfigError,
    DataError,
    GridSearchError,
    MassClusterError,
    SeedingError,
)
from .kernels import (
    GaussianKernelExact,
    IsolationKernelModel,
    NystromGaussianModel,
    embed_ik,
    embed_nystrom,
    fit_ik,
    fit_nystrom,
    ik_similarity,
    load_model,
    save_model,
)
from .massdist import (
    ClusterMeanMap,
    ObjectiveValue,
    density,
    mass,
    mass_distribution,
    mass_matrix,
    mean_map,
    mean_map_from_features,
    total_objective,
    total_objective_from_features,
)
from .metrics import ami_score, contingency, f1_score

__all__ = [
    "__version__",
    # errors
    "MassClusterError", "ConfigError", "DataError", "AlgorithmError",
    "SeedingError", "GridSearchError",
    # data
    "Dataset", "SampleSet", "SYNTHETIC_FAMILIES", "rng_from", "load_csv",
    "save_csv", "normalize_minmax", "subsample", "generate_synthetic",
    # kernels
    "IsolationKernelModel", "NystromGaussianModel", "GaussianKernelExact",
    "fit_ik", "embed_ik", "ik_similarity", "fit_nystrom", "embed_nystrom",
    "save_model", "load_model",
    # massdist
    "ClusterMeanMap", "ObjectiveValue", "mean_map", "mean_map_from_features",
    "mass", "density", "mass_matrix", "mass_distribution",
    "total_objective", "total_objective_from_features",
    # clustering
    "ClusterParams", "SeedClusters", "ClusterAssignment", "ParamGrid",
    "GridSearchResult", "seed_components", "assign_by_mass", "refine",
    "run_mmc", "run_dmc", "grid_search", "default_mmc_grid", "default_dmc_grid",
    # metrics
    "contingency", "f1_score", "ami_score",
    # analysis
    "CohesivenessCurve", "ConditionOneReport", "ConditionTwoReport",
    "CorrectionCurve", "ScaleReport", "cohesiveness_curve",
    "check_condition_one", "check_condition_two", "correction_curve",
    "spearman", "scaleup",
]
