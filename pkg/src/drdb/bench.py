"""Simulation designs, baseline estimators and the replication harness.

The linear design draws ``X ~ N_p(0, I)``, ``T | X ~ Bernoulli(e(X))`` with
``e(x) = logistic(x'beta3 - 0.08)`` and ``beta3 = (0.35, 0.35, 0, ...)``,
and potential outcomes ``Y(t) ~ N(m_t(X), Var(m_t(X)) / 5)`` with
``m_1(x) = 5 + 2 x'beta`` and ``m_0(x) = 3 + x'beta``. The quadratic design
adds ``(x**2)'beta12`` to ``m_1`` only.
"""

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import expit
from scipy.stats import norm

from .data import ObservedData
from .errors import DRDBError, EmptyArm, ValidationError
from .nuisance import NuisanceConfig, OracleNuisance
from .procedure import RunConfig

log = logging.getLogger(__name__)

PROPENSITY_SHIFT = -0.08
PROPENSITY_SLOPE = 0.35
FAILURE_FLAG_RATE = 0.01
METRICS_COLUMNS = ["method", "p", "s", "n", "reps", "bias", "mse", "cov", "ci_len", "failures", "family", "flagged"]


def linear_pattern(p, s):
    """``ceil(s/2)`` ones, ``floor(s/2)`` halves, then ``p - s`` zeros."""
    if not 0 <= s <= p:
        raise ValidationError(f"need 0 <= s <= p, got s={s}, p={p}")
    ones = (s + 1) // 2
    return np.concatenate([np.ones(ones), np.full(s - ones, 0.5), np.zeros(p - s)])


def build_quadratic_truth(p, s):
    """Quadratic coefficients and true ATE for the misspecified design.

    ``beta12`` is proportional to the linear pattern and scaled so that
    ``Var(2 X'beta) = 3 Var((X**2)'beta12)``; with ``Var(X_j**2) = 2`` this
    means ``sum(beta12**2) = (2/3) sum(beta**2)``.
    """
    beta = linear_pattern(p, s)
    beta12 = beta * math.sqrt(2.0 / 3.0)
    return beta12, 2.0 + float(beta12.sum())


@dataclass(frozen=True)
class DgpConfig:
    n: int = 1000
    p: int = 10
    s: int = 3
    family: str = "linear"
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("linear", "quadratic"):
            raise ValidationError(f"family must be 'linear' or 'quadratic', got {self.family!r}")
        if not 0 <= self.s <= self.p:
            raise ValidationError(f"need 0 <= s <= p, got s={self.s}, p={self.p}")
        if self.n < 1:
            raise ValidationError("n must be positive")

    @property
    def beta(self):
        return linear_pattern(self.p, self.s)

    @property
    def beta3(self):
        b = np.zeros(self.p)
        b[: min(2, self.p)] = PROPENSITY_SLOPE
        return b

    @property
    def beta12(self):
        if self.family == "linear":
            return np.zeros(self.p)
        return build_quadratic_truth(self.p, self.s)[0]

    @property
    def sigma1_sq(self):
        b = self.beta
        return (4.0 * b @ b + 2.0 * self.beta12 @ self.beta12) / 5.0

    @property
    def sigma0_sq(self):
        b = self.beta
        return float(b @ b) / 5.0

    @property
    def true_ate(self):
        return 2.0 + float(self.beta12.sum())

    @property
    def p1(self):
        """``P(T = 1)``: Gauss-Hermite quadrature of the logistic over ``x'beta3``."""
        sd = float(np.linalg.norm(self.beta3))
        nodes, weights = hermegauss(60)
        return float(weights @ expit(sd * nodes + PROPENSITY_SHIFT) / math.sqrt(2.0 * math.pi))

    def truth(self):
        beta, beta3, beta12 = self.beta, self.beta3, self.beta12

        def m1(x):
            x = np.atleast_2d(x)
            return 5.0 + 2.0 * (x @ beta) + (x * x) @ beta12

        def m0(x):
            return 3.0 + np.atleast_2d(x) @ beta

        def e(x):
            return expit(np.atleast_2d(x) @ beta3 + PROPENSITY_SHIFT)

        return OracleNuisance(m1=m1, m0=m0, e=e, p1=self.p1)


def generate_dgp(cfg, rep_seed):
    """One simulated dataset and the true nuisance functions that generated it."""
    rng = np.random.default_rng(rep_seed)
    truth = cfg.truth()
    x = rng.standard_normal((cfg.n, cfg.p))
    t = (rng.random(cfg.n) < truth.e(x)).astype(np.int8)
    noise = rng.standard_normal((cfg.n, 2))
    y1 = truth.m1(x) + math.sqrt(cfg.sigma1_sq) * noise[:, 0]
    y0 = truth.m0(x) + math.sqrt(cfg.sigma0_sq) * noise[:, 1]
    y = np.where(t == 1, y1, y0)
    return ObservedData(y, t, x), truth


def eif_gamma(y, t, m1x, m0x, ex):
    """Per-row efficient influence function value of the ATE, plug-in term included.

    Arguments are the outcome, treatment and the nuisance functions already
    evaluated at the row's covariates; arrays broadcast.
    """
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return m1x - m0x + t * (y - m1x) / ex - (1.0 - t) * (y - m0x) / (1.0 - ex)


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lower: float
    upper: float
    degenerate: bool = False
    note: str = ""

    @property
    def length(self):
        return self.upper - self.lower


def oracle_estimator(data, truth, alpha=0.05):
    """Mean of the EIF under the true nuisances with a normal-approximation interval."""
    values = eif_gamma(data.y, data.t, truth.m1(data.x), truth.m0(data.x), truth.e(data.x))
    point = float(values.mean())
    if data.n < 2:
        return IntervalEstimate(point, point, point, degenerate=True, note="normal-approximation")
    half = norm.ppf(1.0 - alpha / 2.0) * values.std(ddof=1) / math.sqrt(data.n)
    return IntervalEstimate(point, float(point - half), float(point + half), note="normal-approximation")


def naive_estimator(data, alpha=0.05):
    """Difference of arm means with a Welch-type normal interval."""
    y1 = data.y[data.t == 1]
    y0 = data.y[data.t == 0]
    if y1.size == 0 or y0.size == 0:
        raise EmptyArm("naive estimator needs both arms")
    point = float(y1.mean() - y0.mean())
    if y1.size < 2 or y0.size < 2:
        return IntervalEstimate(point, point, point, degenerate=True)
    se = math.sqrt(y1.var(ddof=1) / y1.size + y0.var(ddof=1) / y0.size)
    half = norm.ppf(1.0 - alpha / 2.0) * se
    return IntervalEstimate(point, float(point - half), float(point + half))


@dataclass(frozen=True)
class MethodSpec:
    """One estimator in a campaign: ``kind`` is oracle, naive or drdb."""

    name: str
    kind: str = "drdb"
    nuisance: NuisanceConfig = field(default_factory=NuisanceConfig)
    k: int = 5
    m_draws: int = 1000
    alpha: float = 0.05
    estimand: str = "ate"

    def __post_init__(self):
        if self.kind not in ("oracle", "naive", "drdb"):
            raise ValidationError(f"method kind must be oracle, naive or drdb, got {self.kind!r}")
        if isinstance(self.nuisance, dict):
            object.__setattr__(self, "nuisance", NuisanceConfig.from_dict(self.nuisance))

    @classmethod
    def from_dict(cls, block):
        """Build from a preset name or a config mapping (optionally ``{"preset": ...}``)."""
        if isinstance(block, str):
            return lookup_preset(block)
        block = dict(block)
        nuisance = block.pop("nuisance", None) or {}
        preset = block.pop("preset", None)
        fields = {}
        if preset is not None:
            base = lookup_preset(preset)
            fields = {"name": base.name, "kind": base.kind, "k": base.k, "m_draws": base.m_draws,
                      "alpha": base.alpha, "estimand": base.estimand}
            nuisance = {**base.nuisance.to_dict(), **nuisance}
        fields.update(block)
        try:
            return cls(nuisance=NuisanceConfig.from_dict(nuisance), **fields)
        except TypeError as exc:
            raise ValidationError(f"bad method block {block!r}: {exc}") from None


PRESETS = {
    "oracle": MethodSpec("Oracle", "oracle"),
    "naive": MethodSpec("Naive", "naive"),
    "DRDB-R": MethodSpec("DRDB-R", "drdb", NuisanceConfig(method="ridge")),
    "DRDB-Rq": MethodSpec("DRDB-Rq", "drdb", NuisanceConfig(method="ridge", features="quadratic")),
    "DRDB-O": MethodSpec("DRDB-O", "drdb", NuisanceConfig(method="oracle")),
}


def lookup_preset(name):
    for key, spec in PRESETS.items():
        if name.lower() in (key.lower(), spec.name.lower()):
            return spec
    raise ValidationError(f"unknown method {name!r}; presets are {sorted(PRESETS)}")


def run_method(method, data, truth, seed):
    """Point estimate and interval for one method on one dataset."""
    if method.kind == "oracle":
        return oracle_estimator(data, truth, method.alpha)
    if method.kind == "naive":
        return naive_estimator(data, method.alpha)
    from .estimands import estimate_target

    cfg = RunConfig(
        k=method.k, m_draws=method.m_draws, alpha=method.alpha, estimand=method.estimand,
        nuisance=method.nuisance, seed=seed, retain_draws=False,
    )
    summary = estimate_target(data, cfg, oracle=truth)
    return IntervalEstimate(summary.mean, summary.ci_lower, summary.ci_upper)


def replication_seeds(seed, rep, n_methods):
    data_seed = np.random.SeedSequence(int(seed), spawn_key=(int(rep),))
    method_seeds = [
        int(np.random.SeedSequence(int(seed), spawn_key=(int(rep), j + 1)).generate_state(1)[0])
        for j in range(n_methods)
    ]
    return data_seed, method_seeds


def replicate_once(dgp, methods, seed, rep):
    """Run every method on replication ``rep``; failures come back as strings."""
    data_seed, method_seeds = replication_seeds(seed, rep, len(methods))
    data, truth = generate_dgp(dgp, data_seed)
    out = []
    for method, mseed in zip(methods, method_seeds):
        try:
            out.append(run_method(method, data, truth, mseed))
        except (DRDBError, np.linalg.LinAlgError) as exc:
            log.warning("replication %d, method %s failed: %s", rep, method.name, exc)
            out.append(f"{type(exc).__name__}: {exc}")
    return out


def _replicate_star(args):
    return replicate_once(*args)


@dataclass(frozen=True)
class MetricsRow:
    method: str
    bias: float
    mse: float
    cov: float
    ci_len: float
    reps: int
    failures: int
    n: int
    p: int
    s: int
    family: str = "linear"

    @property
    def flagged(self):
        total = self.reps + self.failures
        return total > 0 and self.failures / total > FAILURE_FLAG_RATE

    def to_record(self):
        return {
            "method": self.method, "p": self.p, "s": self.s, "n": self.n, "reps": self.reps,
            "bias": self.bias, "mse": self.mse, "cov": self.cov, "ci_len": self.ci_len,
            "failures": self.failures, "family": self.family, "flagged": int(self.flagged),
        }


def metrics_from_estimates(method, estimates, truth_value, dgp, failures=0):
    est = np.array([e.point for e in estimates])
    lo = np.array([e.lower for e in estimates])
    hi = np.array([e.upper for e in estimates])
    if est.size == 0:
        nan = float("nan")
        return MetricsRow(method, nan, nan, nan, nan, 0, failures, dgp.n, dgp.p, dgp.s, dgp.family)
    err = est - truth_value
    hit = (lo <= truth_value) & (truth_value <= hi)
    return MetricsRow(
        method=method, bias=float(err.mean()), mse=float(np.mean(err * err)), cov=float(hit.mean()),
        ci_len=float(np.mean(hi - lo)), reps=int(est.size), failures=int(failures),
        n=dgp.n, p=dgp.p, s=dgp.s, family=dgp.family,
    )


def default_workers():
    try:
        return max(1, int(os.environ.get("DRDB_THREADS", "1")))
    except ValueError:
        return 1


def run_replications(dgp, methods, reps, seed=0, workers=None, return_estimates=False):
    """Monte Carlo campaign: Bias, MSE, coverage and CI length per method.

    Replication ``r`` depends only on ``(seed, r)``, so results do not depend
    on ``workers``.
    """
    if reps < 2:
        raise ValidationError("reps >= 2 required")
    methods = [m if isinstance(m, MethodSpec) else MethodSpec.from_dict(m) for m in methods]
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = [(dgp, methods, seed, r) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_star, jobs, chunksize=max(1, reps // (4 * workers))))
    else:
        results = [replicate_once(*job) for job in jobs]
    rows = []
    per_method = []
    for j, method in enumerate(methods):
        ok = [r[j] for r in results if isinstance(r[j], IntervalEstimate)]
        failures = sum(1 for r in results if not isinstance(r[j], IntervalEstimate))
        row = metrics_from_estimates(method.name, ok, dgp.true_ate, dgp, failures)
        if row.flagged:
            log.warning("method %s: %d of %d replications failed", method.name, failures, reps)
        rows.append(row)
        per_method.append(ok)
    if return_estimates:
        return rows, per_method
    return rows


def write_metrics_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.to_record())


def read_metrics_csv(path):
    """Rows of a metrics CSV as :class:`MetricsRow` (``flagged`` is recomputed)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(MetricsRow(
                method=rec["method"], bias=float(rec["bias"]), mse=float(rec["mse"]),
                cov=float(rec["cov"]), ci_len=float(rec["ci_len"]), reps=int(rec["reps"]),
                failures=int(rec["failures"]), n=int(rec["n"]), p=int(rec["p"]), s=int(rec["s"]),
                family=rec.get("family") or "linear",
            ))
    return rows
