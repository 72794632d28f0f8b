"""Doubly robust debiased Bayesian inference for average treatment effects."""

from .data import ArmSubset, FoldPlan, ObservedData, arm_subset, load_csv, split_folds, write_csv
from .debias import (
    DensityRatioPair,
    TPosterior,
    WeightedObservables,
    bias_posterior,
    conditional_posterior,
    density_ratio,
    sample_t,
    weighted_observables,
)
from .estimands import EstimandSpec, TargetWeights, build_weights, estimate_target, estimate_weighted, parse_estimand
from .nuisance import (
    LogisticLaplacePosterior,
    NuisanceConfig,
    NuisanceDraw,
    OracleNuisance,
    RidgeRegressionPosterior,
    draw_propensity,
    draw_regression,
    estimate_p1,
    fit_logistic_laplace,
    fit_ridge,
)
from .procedure import (
    FoldAtePosterior,
    PosteriorSummary,
    RunConfig,
    aggregate_cf,
    estimate,
    estimate_mu0,
    estimate_mu1,
    fold_posterior_ate,
    sample_fold,
)

__version__ = "0.1.0"
