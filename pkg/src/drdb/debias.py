"""Density ratios, weighted residuals and the closed-form t posteriors.

Both posteriors come from a Normal working model with the improper prior
``pi(mu, sigma^2) ~ 1 / sigma^2`` on a sample of ``n`` scalar observables,
whose marginal posterior for the mean is ``t_{n-1}(mean, ssd / (n (n - 1)))``.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .errors import EmptyArm, TooFewObservations


@dataclass(frozen=True)
class TPosterior:
    """Location-scale Student-t law ``t_nu(eta, c2)``; ``c2 == 0`` is a point mass."""

    nu: float
    eta: float
    c2: float

    @property
    def is_point_mass(self):
        return self.c2 == 0.0

    @property
    def scale(self):
        return math.sqrt(self.c2)

    @property
    def has_mean(self):
        return self.is_point_mass or self.nu > 1

    @property
    def has_variance(self):
        return self.is_point_mass or self.nu > 2

    @property
    def mean(self):
        """Posterior mean, or ``None`` when it does not exist (nu <= 1)."""
        return self.eta if self.has_mean else None

    @property
    def variance(self):
        """Posterior variance, or ``None`` when it does not exist (nu <= 2)."""
        if self.is_point_mass:
            return 0.0
        if self.nu <= 2:
            return None
        return self.c2 * self.nu / (self.nu - 2.0)

    def shifted(self, delta):
        return TPosterior(self.nu, self.eta + delta, self.c2)


@dataclass(frozen=True, eq=False)
class DensityRatioPair:
    r1: Callable[[np.ndarray], np.ndarray]
    r0: Callable[[np.ndarray], np.ndarray]
    p1_hat: float

    def for_arm(self, arm):
        return self.r1 if arm == 1 else self.r0


@dataclass(frozen=True, eq=False)
class WeightedObservables:
    values: np.ndarray
    arm: int

    def __len__(self):
        return self.values.shape[0]


def density_ratio(e_draw, p1_hat):
    """Ratios ``p1/e(x)`` and ``(1 - p1)/(1 - e(x))`` from one propensity draw."""
    if not 0.0 < p1_hat < 1.0:
        raise ValueError(f"p1_hat must lie in (0, 1), got {p1_hat}")

    def r1(x):
        return p1_hat / e_draw(x)

    def r0(x):
        return (1.0 - p1_hat) / (1.0 - e_draw(x))

    return DensityRatioPair(r1, r0, float(p1_hat))


def weighted_observables(test_arm, m_draw, r):
    """``r(X_i) * (Y_i - m(X_i))`` over the rows of one arm of the test fold."""
    if len(test_arm) == 0:
        raise EmptyArm("weighted observables need a nonempty arm")
    x = test_arm.x
    values = r(x) * (test_arm.y - m_draw(x))
    values = np.ascontiguousarray(values, dtype=np.float64)
    values.setflags(write=False)
    return WeightedObservables(values, int(getattr(test_arm, "arm", 1)))


def _t_from_sample(values):
    values = np.ascontiguousarray(values, dtype=np.float64)
    n = values.shape[0]
    if n < 2:
        raise TooFewObservations(f"need at least 2 observations, got {n}")
    mean, ssd = _kernels.mean_and_ssd(values)
    if np.all(values == values[0]):
        return TPosterior(float(n - 1), float(values[0]), 0.0)
    return TPosterior(float(n - 1), float(mean), float(ssd) / (n * (n - 1.0)))


def bias_posterior(w):
    """Posterior of the first-order bias from one arm's weighted observables."""
    values = w.values if isinstance(w, WeightedObservables) else w
    return _t_from_sample(values)


def conditional_posterior(m_values, b):
    """Posterior of the target given a bias value ``b``.

    ``m_values`` are the drawn regression contrast evaluated on every row of
    the test fold; the location is their mean plus ``b``.
    """
    return _t_from_sample(m_values).shifted(float(b))


def sample_t(post, rng, size=None):
    """Draw from ``t_nu(eta, c2)``; a point mass returns ``eta`` exactly."""
    if post.is_point_mass:
        return post.eta if size is None else np.full(size, post.eta)
    return post.eta + post.scale * rng.standard_t(post.nu, size=size)
