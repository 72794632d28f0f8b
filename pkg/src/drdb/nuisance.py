"""Bayesian nuisance posteriors and single function-valued draws.

Outcome regressions use a conjugate Normal-Inverse-Gamma ridge model per
treatment arm; the propensity score uses a Laplace (Gaussian-at-MAP)
approximation to a ridge-penalised logistic posterior. Each posterior is
fitted once per training fold and drawn from exactly once.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

from . import _kernels
from .errors import NoConvergence, RankDeficient, TooFewRows, ValidationError

LAMBDA_GRID = np.logspace(-4, 2, 13)
CV_FOLDS = 5
# Weak Gaussian prior on the logistic intercept (sd 100). Keeps the MAP finite
# when a training fold contains a single label; negligible otherwise.
INTERCEPT_PRECISION = 1e-4
NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 100
FEATURE_MAPS = ("linear", "quadratic")


def expand_features(x, features="linear"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if features == "linear":
        return x
    if features == "quadratic":
        return np.hstack([x, x * x])
    raise ValidationError(f"unknown feature map {features!r}")


def _design(x, features):
    z = expand_features(x, features)
    return np.hstack([np.ones((z.shape[0], 1)), z])


@dataclass(frozen=True)
class NuisanceConfig:
    method: str = "ridge"
    lam: Union[float, str] = "cv"
    lambda_e: float = 1.0
    clip: float = 0.01
    p1_source: str = "train"
    features: str = "linear"

    def __post_init__(self):
        if self.method not in ("ridge", "oracle"):
            raise ValidationError(f"nuisance method must be 'ridge' or 'oracle', got {self.method!r}")
        if isinstance(self.lam, str):
            if self.lam != "cv":
                raise ValidationError(f"lambda must be a number or 'cv', got {self.lam!r}")
        elif not self.lam >= 0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        if not self.lambda_e > 0:
            raise ValidationError(f"lambda_e must be > 0, got {self.lambda_e}")
        if not 0 < self.clip < 0.5:
            raise ValidationError(f"clip must lie in (0, 0.5), got {self.clip}")
        if self.p1_source not in ("train", "full", "test"):
            raise ValidationError(f"p1_source must be train, full or test, got {self.p1_source!r}")
        if self.features not in FEATURE_MAPS:
            raise ValidationError(f"features must be one of {FEATURE_MAPS}, got {self.features!r}")

    @classmethod
    def from_dict(cls, block):
        known = {"method", "lambda", "lam", "lambda_e", "clip", "p1_source", "features"}
        unknown = set(block) - known
        if unknown:
            raise ValidationError(f"unknown nuisance keys: {sorted(unknown)}")
        kwargs = dict(block)
        if "lambda" in kwargs:
            kwargs["lam"] = kwargs.pop("lambda")
        return cls(**kwargs)

    def to_dict(self):
        return {
            "method": self.method,
            "lambda": self.lam,
            "lambda_e": self.lambda_e,
            "clip": self.clip,
            "p1_source": self.p1_source,
            "features": self.features,
        }


@dataclass(frozen=True, eq=False)
class NuisanceDraw:
    """A single realised nuisance function.

    ``evaluate`` maps an ``(n, p)`` covariate matrix to ``n`` values; a
    single covariate vector gives a length-1 array. ``params`` holds the
    drawn coefficients when the draw comes from a parametric posterior.
    """

    kind: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    params: Optional[np.ndarray] = None
    clip: Optional[float] = None

    def __call__(self, x):
        return self.evaluate(x)

    @classmethod
    def linear(cls, coef, features="linear"):
        coef = np.array(coef, dtype=np.float64)
        coef.setflags(write=False)

        def evaluate(x):
            return _design(x, features) @ coef

        return cls("regression", evaluate, coef)

    @classmethod
    def logistic(cls, coef, clip, features="linear"):
        coef = np.array(coef, dtype=np.float64)
        coef.setflags(write=False)

        def evaluate(x):
            eta = _design(x, features) @ coef
            return np.clip(expit(eta), clip, 1.0 - clip)

        return cls("propensity", evaluate, coef, clip)


@dataclass(frozen=True, eq=False)
class RidgeRegressionPosterior:
    coef_mean: np.ndarray
    coef_precision_chol: np.ndarray
    rss: float
    dof: float
    lam: float
    features: str = "linear"

    @property
    def precision(self):
        return self.coef_precision_chol @ self.coef_precision_chol.T


@dataclass(frozen=True, eq=False)
class LogisticLaplacePosterior:
    map_coef: np.ndarray
    hessian_chol: np.ndarray
    lambda_e: float
    clip: float
    grad_norm: float = 0.0
    iterations: int = 0
    features: str = "linear"


@dataclass(frozen=True, eq=False)
class OracleNuisance:
    """True nuisance functions; every draw returns them unchanged."""

    m1: Callable[[np.ndarray], np.ndarray]
    m0: Callable[[np.ndarray], np.ndarray]
    e: Callable[[np.ndarray], np.ndarray]
    p1: float

    def regression_draw(self, arm):
        fn = self.m1 if arm == 1 else self.m0
        return NuisanceDraw("regression", lambda x: np.asarray(fn(np.atleast_2d(x)), dtype=np.float64))

    def propensity_draw(self, clip=None):
        if clip is None:
            return NuisanceDraw("propensity", lambda x: np.asarray(self.e(np.atleast_2d(x)), dtype=np.float64))
        return NuisanceDraw(
            "propensity",
            lambda x: np.clip(np.asarray(self.e(np.atleast_2d(x)), dtype=np.float64), clip, 1.0 - clip),
            clip=clip,
        )


def _penalty_mask(q):
    mask = np.ones(q)
    mask[0] = 0.0
    return mask


def select_lambda(design, y, grid=LAMBDA_GRID, n_folds=CV_FOLDS):
    """Ridge penalty from ``grid`` minimising K-fold squared prediction error.

    Inner folds interleave rows (row ``i`` goes to fold ``i % n_folds``) so the
    choice is deterministic given the data.
    """
    n, q = design.shape
    n_folds = min(n_folds, n)
    fold_ids = np.arange(n) % n_folds
    errors = _kernels.ridge_cv_errors(
        np.ascontiguousarray(design), np.ascontiguousarray(y), _penalty_mask(q),
        np.asarray(grid, dtype=np.float64), fold_ids, n_folds,
    )
    return float(grid[int(np.argmin(errors))])


def fit_ridge(train, lam="cv", features="linear"):
    """Conjugate Bayesian ridge posterior for one treatment arm.

    Prior: slopes ~ N(0, sigma^2 / lam), flat intercept, p(sigma^2) ~ 1/sigma^2.
    The posterior is ``coef | sigma^2 ~ N(mean, sigma^2 * precision^-1)`` with
    ``precision = D'D + lam * diag(0, 1, ..., 1)`` and
    ``sigma^2 ~ InvGamma(dof / 2, rss / 2)``, where ``rss`` includes the
    penalty term ``lam * |slopes|^2``.
    """
    x = np.asarray(train.x, dtype=np.float64)
    y = np.asarray(train.y, dtype=np.float64)
    design = _design(x, features) if x.shape[0] else np.ones((0, 1))
    n, q = design.shape
    if n < q + 2:
        raise TooFewRows(f"ridge fit needs at least {q + 2} rows, got {n}")
    if isinstance(lam, str):
        if lam != "cv":
            raise ValidationError(f"lambda must be a number or 'cv', got {lam!r}")
        lam = select_lambda(design, y) if q > 1 else 0.0
    lam = float(lam)
    mask = _penalty_mask(q)
    precision = design.T @ design + np.diag(lam * mask)
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError:
        raise RankDeficient(f"ridge precision is not positive definite at lambda={lam}") from None
    rhs = design.T @ y
    mean = solve_triangular(chol.T, solve_triangular(chol, rhs, lower=True), lower=False)
    resid = y - design @ mean
    rss = float(resid @ resid + lam * (mean[1:] @ mean[1:]))
    # Every coefficient under a flat prior removes one degree of freedom.
    dof = float(n - 1 if lam > 0 else n - q)
    mean.setflags(write=False)
    chol.setflags(write=False)
    return RidgeRegressionPosterior(mean, chol, rss, dof, lam, features)


def draw_regression(post, rng):
    """One outcome-regression function from a ridge posterior."""
    sigma2 = post.rss / 2.0 / rng.standard_gamma(post.dof / 2.0)
    z = rng.standard_normal(post.coef_mean.shape[0])
    offset = solve_triangular(post.coef_precision_chol.T, z, lower=False)
    coef = post.coef_mean + np.sqrt(sigma2) * offset
    return NuisanceDraw.linear(coef, post.features)


def fit_logistic_laplace(train, lambda_e=1.0, clip=0.01, features="linear"):
    """Laplace approximation to a ridge-penalised logistic posterior.

    ``train`` needs ``x`` and binary ``t``. The slopes carry a N(0, 1/lambda_e)
    prior; the intercept is left effectively unpenalised.
    """
    if not lambda_e > 0:
        raise ValidationError("lambda_e must be positive")
    if not 0 < clip < 0.5:
        raise ValidationError("clip must lie in (0, 0.5)")
    design = _design(train.x, features)
    labels = np.asarray(train.t, dtype=np.float64)
    n, q = design.shape
    if n < q + 2:
        raise TooFewRows(f"logistic fit needs at least {q + 2} rows, got {n}")
    penalty = np.full(q, float(lambda_e))
    penalty[0] = INTERCEPT_PRECISION
    coef, hess, grad_norm, iters = _kernels.logistic_newton(
        np.ascontiguousarray(design), labels, penalty, NEWTON_TOL, NEWTON_MAX_ITER
    )
    if not grad_norm < NEWTON_TOL:
        raise NoConvergence(iters, grad_norm)
    chol = np.linalg.cholesky(hess)
    coef = np.array(coef)
    coef.setflags(write=False)
    chol.setflags(write=False)
    return LogisticLaplacePosterior(coef, chol, float(lambda_e), float(clip), float(grad_norm), int(iters), features)


def draw_propensity(post, rng):
    """One clamped propensity function from the Laplace posterior."""
    z = rng.standard_normal(post.map_coef.shape[0])
    coef = post.map_coef + solve_triangular(post.hessian_chol.T, z, lower=False)
    return NuisanceDraw.logistic(coef, post.clip, post.features)


def estimate_p1(t, clip=0.01):
    """Treated fraction, clamped to ``[clip, 1 - clip]``."""
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        raise TooFewRows("cannot estimate p1 from an empty set")
    return float(min(max(t.mean(), clip), 1.0 - clip))
