"""Cross-fitted debiased Bayesian posteriors for the ATE and arm means.

Per fold: fit nuisance posteriors on the training part, take one draw of
each, build the bias posteriors from the reweighted residuals of each test
arm and the conditional posterior from the drawn regression contrast over
the whole test fold. The fold posterior is the law of
``eta_m + (b1 - b0) + c_S * T_nu`` and is sampled by forward simulation.
Fold draws are averaged index-wise into the final posterior.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import arm_subset, split_folds
from .debias import (
    bias_posterior,
    conditional_posterior,
    density_ratio,
    sample_t,
    weighted_observables,
)
from .errors import DegenerateFold, DRDBError, LengthMismatch, ValidationError
from .nuisance import (
    NuisanceConfig,
    draw_propensity,
    draw_regression,
    estimate_p1,
    expand_features,
    fit_logistic_laplace,
    fit_ridge,
)

MIN_TEST_ARM = 4

# spawn-key prefixes for the independent random streams of one run
_PLAN_KEY, _NUISANCE_KEY, _SAMPLE_KEY = 0, 1, 2


@dataclass(frozen=True)
class RunConfig:
    k: int = 5
    m_draws: int = 1000
    alpha: float = 0.05
    estimand: str = "ate"
    nuisance: NuisanceConfig = field(default_factory=NuisanceConfig)
    seed: int = 0
    retain_draws: bool = True

    def __post_init__(self):
        if self.k < 2:
            raise ValidationError(f"k must be >= 2, got {self.k}")
        if self.m_draws < 100:
            raise ValidationError(f"m_draws must be >= 100, got {self.m_draws}")
        if not 0.0 < self.alpha < 0.5:
            raise ValidationError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if isinstance(self.nuisance, dict):
            object.__setattr__(self, "nuisance", NuisanceConfig.from_dict(self.nuisance))

    def with_(self, **changes):
        return replace(self, **changes)


def stream(seed, *key):
    """Independent generator for ``(seed, key)``; identical inputs give identical streams."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def plan_seed(seed):
    return int(np.random.SeedSequence(int(seed), spawn_key=(_PLAN_KEY,)).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class FoldNuisance:
    """One draw of every nuisance for a fold, plus the treated-fraction estimate."""

    m1: object
    m0: object
    e: object
    p1_hat: float
    lambdas: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class FoldAtePosterior:
    cond_base: object
    bias1: object
    bias0: object
    fold_id: int
    diagnostics: dict = field(default_factory=dict)

    def closed_mean(self):
        return self.cond_base.eta + self.bias1.eta - self.bias0.eta

    def closed_variance(self):
        parts = [self.cond_base.variance, self.bias1.variance, self.bias0.variance]
        return None if any(v is None for v in parts) else sum(parts)

    def sample(self, m, rng):
        b1 = sample_t(self.bias1, rng, m)
        b0 = sample_t(self.bias0, rng, m)
        base = sample_t(self.cond_base, rng, m)
        return base + (b1 - b0)

    def per_fold_record(self):
        return {
            "fold": self.fold_id,
            "eta_m": self.cond_base.eta,
            "eta1": self.bias1.eta,
            "eta0": self.bias0.eta,
            "c_s2": self.cond_base.c2,
            "nu_s": self.cond_base.nu,
            "n1": self.diagnostics.get("n1"),
            "n0": self.diagnostics.get("n0"),
            "p1_hat": self.diagnostics.get("p1_hat"),
        }


@dataclass(frozen=True, eq=False)
class FoldArmPosterior:
    """Fold posterior for a single arm mean ``E[Y(arm)]``."""

    cond_base: object
    bias: object
    arm: int
    fold_id: int
    diagnostics: dict = field(default_factory=dict)

    def closed_mean(self):
        return self.cond_base.eta + self.bias.eta

    def closed_variance(self):
        parts = [self.cond_base.variance, self.bias.variance]
        return None if any(v is None for v in parts) else sum(parts)

    def sample(self, m, rng):
        b = sample_t(self.bias, rng, m)
        base = sample_t(self.cond_base, rng, m)
        return base + b

    def per_fold_record(self):
        return {
            "fold": self.fold_id,
            "eta_m": self.cond_base.eta,
            f"eta{self.arm}": self.bias.eta,
            "c_s2": self.cond_base.c2,
            "nu_s": self.cond_base.nu,
            f"n{self.arm}": self.diagnostics.get(f"n{self.arm}"),
            "p1_hat": self.diagnostics.get("p1_hat"),
        }


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    estimand: str
    mean: float
    variance: Optional[float]
    ci_lower: float
    ci_upper: float
    alpha: float
    m_draws: int
    k: int
    seed: int
    closed_form_mean: float
    per_fold: list
    draws: Optional[np.ndarray] = None

    @property
    def sd(self):
        return None if self.variance is None else math.sqrt(self.variance)

    @property
    def ci_length(self):
        return self.ci_upper - self.ci_lower

    def to_dict(self):
        return {
            "estimand": self.estimand,
            "mean": self.mean,
            "variance": self.variance,
            "ci": [self.ci_lower, self.ci_upper],
            "alpha": self.alpha,
            "k": self.k,
            "m_draws": self.m_draws,
            "seed": self.seed,
            "closed_form_mean": self.closed_form_mean,
            "per_fold": self.per_fold,
        }


def _check_fold_sizes(data, train_idx, test_idx, fold, arms, min_train):
    for arm in arms:
        n_test = int(np.count_nonzero(data.t[test_idx] == arm))
        if n_test < MIN_TEST_ARM:
            raise DegenerateFold(f"test fold has {n_test} rows with t={arm}, need {MIN_TEST_ARM}", fold)
        n_train = int(np.count_nonzero(data.t[train_idx] == arm))
        if n_train < min_train:
            raise DegenerateFold(f"training fold has {n_train} rows with t={arm}, need {min_train}", fold)


def draw_fold_nuisances(data, plan, fold, cfg, rng, oracle=None, arms=(1, 0)):
    """Fit the nuisance posteriors on the training part of ``fold`` and draw once from each.

    Draw order is fixed (arm 1 regression, arm 0 regression, propensity) so a
    given stream always yields the same draws.
    """
    nc = cfg.nuisance
    train_idx = plan.train_indices(fold)
    test_idx = plan.test_indices(fold)
    if nc.method == "ridge":
        q = expand_features(data.x[:1], nc.features).shape[1] + 1
        min_train = q + 2
    else:
        min_train = 1
    _check_fold_sizes(data, train_idx, test_idx, fold, arms, min_train)

    if nc.p1_source == "train":
        p1_hat = estimate_p1(data.t[train_idx], nc.clip)
    elif nc.p1_source == "test":
        p1_hat = estimate_p1(data.t[test_idx], nc.clip)
    else:
        p1_hat = estimate_p1(data.t, nc.clip)

    draws = {}
    lambdas = {}
    if nc.method == "oracle":
        if oracle is None:
            raise ValidationError("nuisance method 'oracle' requires the true nuisance functions")
        for arm in (1, 0):
            draws[arm] = oracle.regression_draw(arm)
        e_draw = oracle.propensity_draw(nc.clip)
    else:
        for arm in (1, 0):
            if arm not in arms:
                draws[arm] = None
                continue
            post = fit_ridge(arm_subset(data, train_idx, arm), nc.lam, nc.features)
            lambdas[f"lambda{arm}"] = post.lam
            draws[arm] = draw_regression(post, rng)
        e_post = fit_logistic_laplace(data.take(train_idx), nc.lambda_e, nc.clip)
        e_draw = draw_propensity(e_post, rng)
        lambdas["lambda_e"] = nc.lambda_e
    return FoldNuisance(draws[1], draws[0], e_draw, p1_hat, lambdas)


def assemble_fold_posterior(data, test_idx, nuis, fold_id=0):
    """Closed-form fold posterior for the ATE from one set of nuisance draws."""
    ratios = density_ratio(nuis.e, nuis.p1_hat)
    x_test = data.x[test_idx]
    m_values = nuis.m1(x_test) - nuis.m0(x_test)
    cond = conditional_posterior(m_values, 0.0)
    treated = arm_subset(data, test_idx, 1)
    control = arm_subset(data, test_idx, 0)
    bias1 = bias_posterior(weighted_observables(treated, nuis.m1, ratios.r1))
    bias0 = bias_posterior(weighted_observables(control, nuis.m0, ratios.r0))
    diagnostics = {
        "n_s": int(test_idx.shape[0]),
        "n1": len(treated),
        "n0": len(control),
        "p1_hat": nuis.p1_hat,
        **nuis.lambdas,
    }
    return FoldAtePosterior(cond, bias1, bias0, int(fold_id), diagnostics)


def assemble_arm_posterior(data, test_idx, nuis, arm, fold_id=0):
    ratios = density_ratio(nuis.e, nuis.p1_hat)
    m_draw = nuis.m1 if arm == 1 else nuis.m0
    cond = conditional_posterior(m_draw(data.x[test_idx]), 0.0)
    rows = arm_subset(data, test_idx, arm)
    bias = bias_posterior(weighted_observables(rows, m_draw, ratios.for_arm(arm)))
    diagnostics = {"n_s": int(test_idx.shape[0]), f"n{arm}": len(rows), "p1_hat": nuis.p1_hat, **nuis.lambdas}
    return FoldArmPosterior(cond, bias, int(arm), int(fold_id), diagnostics)


def fold_posterior_ate(data, plan, fold, cfg, rng, oracle=None):
    nuis = draw_fold_nuisances(data, plan, fold, cfg, rng, oracle)
    return assemble_fold_posterior(data, plan.test_indices(fold), nuis, fold)


def sample_fold(fp, m, rng):
    """``m`` draws from a fold posterior by hierarchical forward simulation."""
    if m < 1:
        raise ValueError("draw count must be positive")
    return fp.sample(m, rng)


def aggregate_cf(fold_draws):
    """Index-wise average of equal-length per-fold draw vectors."""
    arrays = [np.asarray(d, dtype=np.float64) for d in fold_draws]
    if not arrays:
        raise LengthMismatch("no fold draws to aggregate")
    m = arrays[0].shape[0]
    if any(a.shape != (m,) for a in arrays):
        raise LengthMismatch(f"fold draw lengths differ: {[a.shape for a in arrays]}")
    return np.mean(np.vstack(arrays), axis=0)


def summarize(draws, fold_posteriors, cfg, estimand):
    k = len(fold_posteriors)
    lo, hi = np.quantile(draws, [cfg.alpha / 2.0, 1.0 - cfg.alpha / 2.0])
    closed_mean = sum(fp.closed_mean() for fp in fold_posteriors) / k
    variances = [fp.closed_variance() for fp in fold_posteriors]
    variance = None if any(v is None for v in variances) else sum(variances) / k**2
    return PosteriorSummary(
        estimand=estimand,
        mean=float(np.mean(draws)),
        variance=variance,
        ci_lower=float(lo),
        ci_upper=float(hi),
        alpha=cfg.alpha,
        m_draws=int(draws.shape[0]),
        k=k,
        seed=cfg.seed,
        closed_form_mean=float(closed_mean),
        per_fold=[fp.per_fold_record() for fp in fold_posteriors],
        draws=draws if cfg.retain_draws else None,
    )


def fit_folds(data, cfg, build, arms=(1, 0), oracle=None):
    """Run ``build(test_idx, nuisance_draws, fold)`` on every fold of a fresh plan."""
    plan = split_folds(data.n, cfg.k, plan_seed(cfg.seed), min_per_fold=MIN_TEST_ARM)
    posteriors = []
    for fold in range(cfg.k):
        try:
            nuis = draw_fold_nuisances(data, plan, fold, cfg, stream(cfg.seed, _NUISANCE_KEY, fold), oracle, arms)
            posteriors.append(build(plan.test_indices(fold), nuis, fold))
        except DegenerateFold:
            raise
        except DRDBError as exc:
            exc.fold = fold
            exc.args = (f"fold {fold}: {exc}",)
            raise
    return plan, posteriors


def draw_aggregate(posteriors, cfg):
    fold_draws = [sample_fold(fp, cfg.m_draws, stream(cfg.seed, _SAMPLE_KEY, fp.fold_id)) for fp in posteriors]
    return aggregate_cf(fold_draws)


def estimate(data, cfg=None, oracle=None):
    """Cross-fitted DRDB posterior for the average treatment effect."""
    cfg = cfg or RunConfig()
    _, posteriors = fit_folds(
        data, cfg, lambda idx, nuis, fold: assemble_fold_posterior(data, idx, nuis, fold), oracle=oracle
    )
    return summarize(draw_aggregate(posteriors, cfg), posteriors, cfg, "ate")


def estimate_arm_mean(data, arm, cfg=None, oracle=None):
    cfg = cfg or RunConfig()
    _, posteriors = fit_folds(
        data, cfg, lambda idx, nuis, fold: assemble_arm_posterior(data, idx, nuis, arm, fold),
        arms=(arm,), oracle=oracle,
    )
    return summarize(draw_aggregate(posteriors, cfg), posteriors, cfg, f"mu{arm}")


def estimate_mu1(data, cfg=None, oracle=None):
    """Cross-fitted DRDB posterior for ``E[Y(1)]``."""
    return estimate_arm_mean(data, 1, cfg, oracle)


def estimate_mu0(data, cfg=None, oracle=None):
    """Cross-fitted DRDB posterior for ``E[Y(0)]``."""
    return estimate_arm_mean(data, 0, cfg, oracle)
