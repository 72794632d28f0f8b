"""Weighted estimands: ATT, ATC and covariate-threshold subgroups.

A target ``E[Y(1) - Y(0) | A]`` reweights the fold in two places. The
conditional posterior is built from ``w(X) * m(X)`` over the test fold with
``w = P(A | X) / P(A)``, and each arm's bias posterior from
``r_t(X) * (Y - m_t(X))`` with
``r_t = P(A | X) P(T = t) / (P(A) P(T = t | X))``.
"""

import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .debias import bias_posterior, conditional_posterior, weighted_observables
from .data import arm_subset
from .errors import EmptySubgroup, ValidationError
from .procedure import (
    FoldAtePosterior,
    RunConfig,
    draw_aggregate,
    estimate,
    estimate_arm_mean,
    fit_folds,
    summarize,
)

_SUBGROUP = re.compile(r"^subgroup:x(\d+)(>|<=)([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)$")


@dataclass(frozen=True)
class EstimandSpec:
    """``kind`` is ate, att, atc or subgroup; subgroups select ``x_j > delta`` or ``x_j <= delta``.

    ``column`` is 0-based; the text form ``subgroup:x1>0`` names the first
    covariate.
    """

    kind: str = "ate"
    column: Optional[int] = None
    threshold: Optional[float] = None
    direction: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("ate", "att", "atc", "subgroup"):
            raise ValidationError(f"unknown weighted estimand {self.kind!r}")
        has_rule = self.column is not None
        if has_rule != (self.kind == "subgroup"):
            raise ValidationError("a subgroup rule is required exactly when kind is 'subgroup'")
        if has_rule and self.direction not in (">", "<="):
            raise ValidationError(f"subgroup direction must be '>' or '<=', got {self.direction!r}")

    def indicator(self, x):
        col = np.atleast_2d(x)[:, self.column]
        return (col > self.threshold) if self.direction == ">" else (col <= self.threshold)

    @property
    def label(self):
        if self.kind != "subgroup":
            return self.kind
        return f"subgroup:x{self.column + 1}{self.direction}{self.threshold:g}"


def parse_estimand(text):
    """Parse ``ate``, ``att``, ``atc``, ``mu1``, ``mu0`` or ``subgroup:xJ>DELTA``.

    Returns the plain string for ``ate``/``mu1``/``mu0`` and an
    :class:`EstimandSpec` for the weighted kinds.
    """
    if isinstance(text, EstimandSpec):
        return text
    text = text.strip()
    if text in ("ate", "mu1", "mu0"):
        return text
    if text in ("att", "atc"):
        return EstimandSpec(text)
    match = _SUBGROUP.match(text.replace(" ", ""))
    if not match:
        raise ValidationError(f"cannot parse estimand {text!r}")
    j = int(match.group(1))
    if j < 1:
        raise ValidationError("subgroup covariates are numbered from x1")
    return EstimandSpec("subgroup", j - 1, float(match.group(3)), match.group(2))


@dataclass(frozen=True, eq=False)
class TargetWeights:
    w: Callable[[np.ndarray], np.ndarray]
    r1_h: Callable[[np.ndarray], np.ndarray]
    r0_h: Callable[[np.ndarray], np.ndarray]
    pA_hat: float

    def for_arm(self, arm):
        return self.r1_h if arm == 1 else self.r0_h


def build_weights(spec, e_draw, p1_hat, x_train=None):
    """Target and retargeting weights for one fold.

    Subgroups need ``x_train`` to estimate ``P(A)``; ATT and ATC use the
    treated fraction ``p1_hat`` as ``P(A)``.
    """
    if not 0.0 < p1_hat < 1.0:
        raise ValidationError(f"p1_hat must lie in (0, 1), got {p1_hat}")
    q1 = 1.0 - p1_hat
    if spec.kind == "ate":
        return TargetWeights(
            w=lambda x: np.ones(np.atleast_2d(x).shape[0]),
            r1_h=lambda x: p1_hat / e_draw(x),
            r0_h=lambda x: q1 / (1.0 - e_draw(x)),
            pA_hat=1.0,
        )
    if spec.kind == "att":
        return TargetWeights(
            w=lambda x: e_draw(x) / p1_hat,
            r1_h=lambda x: np.ones(np.atleast_2d(x).shape[0]),
            r0_h=lambda x: e_draw(x) * q1 / (p1_hat * (1.0 - e_draw(x))),
            pA_hat=p1_hat,
        )
    if spec.kind == "atc":
        return TargetWeights(
            w=lambda x: (1.0 - e_draw(x)) / q1,
            r1_h=lambda x: (1.0 - e_draw(x)) * p1_hat / (q1 * e_draw(x)),
            r0_h=lambda x: np.ones(np.atleast_2d(x).shape[0]),
            pA_hat=q1,
        )
    if x_train is None:
        raise ValidationError("subgroup weights need the training covariates")
    pA = float(np.mean(spec.indicator(x_train))) if len(x_train) else 0.0
    if pA == 0.0:
        raise EmptySubgroup(f"{spec.label}: no training rows satisfy the rule")
    return TargetWeights(
        w=lambda x: spec.indicator(x) / pA,
        r1_h=lambda x: spec.indicator(x) * p1_hat / (pA * e_draw(x)),
        r0_h=lambda x: spec.indicator(x) * q1 / (pA * (1.0 - e_draw(x))),
        pA_hat=pA,
    )


def assemble_weighted_posterior(data, test_idx, nuis, spec, fold_id=0, x_train=None):
    weights = build_weights(spec, nuis.e, nuis.p1_hat, x_train)
    x_test = data.x[test_idx]
    if spec.kind == "subgroup" and not spec.indicator(x_test).any():
        raise EmptySubgroup(f"{spec.label}: no test rows in fold {fold_id} satisfy the rule")
    m_values = weights.w(x_test) * (nuis.m1(x_test) - nuis.m0(x_test))
    cond = conditional_posterior(m_values, 0.0)
    treated = arm_subset(data, test_idx, 1)
    control = arm_subset(data, test_idx, 0)
    bias1 = bias_posterior(weighted_observables(treated, nuis.m1, weights.r1_h))
    bias0 = bias_posterior(weighted_observables(control, nuis.m0, weights.r0_h))
    diagnostics = {
        "n_s": int(test_idx.shape[0]), "n1": len(treated), "n0": len(control),
        "p1_hat": nuis.p1_hat, "pA_hat": weights.pA_hat, **nuis.lambdas,
    }
    return FoldAtePosterior(cond, bias1, bias0, int(fold_id), diagnostics)


def estimate_weighted(data, spec, cfg=None, oracle=None):
    """Cross-fitted posterior for a weighted treatment-effect estimand."""
    cfg = cfg or RunConfig()
    spec = parse_estimand(spec) if isinstance(spec, str) else spec
    everything = np.arange(data.n)

    def build(test_idx, nuis, fold):
        x_train = data.x[np.setdiff1d(everything, test_idx)] if spec.kind == "subgroup" else None
        return assemble_weighted_posterior(data, test_idx, nuis, spec, fold, x_train)

    _, posteriors = fit_folds(data, cfg, build, oracle=oracle)
    return summarize(draw_aggregate(posteriors, cfg), posteriors, cfg, spec.label)


def estimate_target(data, cfg=None, oracle=None):
    """Dispatch on ``cfg.estimand``: ate, mu1, mu0, att, atc or a subgroup rule."""
    cfg = cfg or RunConfig()
    target = parse_estimand(cfg.estimand)
    if target == "ate":
        return estimate(data, cfg, oracle)
    if target == "mu1":
        return estimate_arm_mean(data, 1, cfg, oracle)
    if target == "mu0":
        return estimate_arm_mean(data, 0, cfg, oracle)
    return estimate_weighted(data, target, cfg, oracle)
