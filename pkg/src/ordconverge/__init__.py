"""Convergence measures for ordinal response distributions under treatment shifts.

The package compares two groups' answer distributions on an ordered
categorical scale (e.g. a five-point Likert item), estimates how a
continuous treatment shifts the treated group's distribution through a
family fixed-effects linear probability system, and summarizes the
movement with total-variation and Kolmogorov distance estimands plus
family-block bootstrap confidence intervals.
"""

__version__ = "0.1.0"

from .core import (
    CategorySystemFit,
    EstimationError,
    Group,
    OrdinalScale,
    Panel,
    RespondentRecord,
    ResponseDistribution,
    ValidationError,
    dedupe_most_recent,
    empirical_distribution,
    sibling_subpanel,
)
from .distances import (
    DistanceResult,
    ScoringRule,
    country_distance,
    kolmogorov_distance,
    min_coupling_mismatch,
    owcad_bruteforce,
    tv_distance,
    wcad_bruteforce,
)
from .estimands import (
    EstimandSet,
    MkdInterval,
    compute_estimands,
    counterfactual_distribution,
    delta_kd0,
    delta_tv0,
    heterogeneity_split,
    mkd,
    mtvd,
    perturbed_distribution,
)
from .felpm import (
    DegenerateCategoryWarning,
    FeOlsFit,
    RegressionSpec,
    fit_category_system,
    fit_fe_ols,
    fit_mean_score,
    fit_regression,
    within_demean,
)
from .bootstrap import BootstrapRun, consistency_distributions, family_bootstrap
from .synthetic import SyntheticConfig, SyntheticTruth, generate_panel, true_estimands

__all__ = [
    "__version__",
    "BootstrapRun",
    "CategorySystemFit",
    "DegenerateCategoryWarning",
    "DistanceResult",
    "EstimandSet",
    "EstimationError",
    "FeOlsFit",
    "Group",
    "MkdInterval",
    "OrdinalScale",
    "Panel",
    "RegressionSpec",
    "RespondentRecord",
    "ResponseDistribution",
    "ScoringRule",
    "SyntheticConfig",
    "SyntheticTruth",
    "ValidationError",
    "compute_estimands",
    "consistency_distributions",
    "counterfactual_distribution",
    "country_distance",
    "dedupe_most_recent",
    "delta_kd0",
    "delta_tv0",
    "empirical_distribution",
    "family_bootstrap",
    "fit_category_system",
    "fit_fe_ols",
    "fit_mean_score",
    "fit_regression",
    "generate_panel",
    "heterogeneity_split",
    "kolmogorov_distance",
    "min_coupling_mismatch",
    "mkd",
    "mtvd",
    "owcad_bruteforce",
    "perturbed_distribution",
    "sibling_subpanel",
    "true_estimands",
    "tv_distance",
    "wcad_bruteforce",
    "within_demean",
]
