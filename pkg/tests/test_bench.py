import math

import numpy as np
import pytest
from scipy.special import expit

from drdb import ObservedData, OracleNuisance
from drdb.bench import (
    DgpConfig,
    MethodSpec,
    MetricsRow,
    build_quadratic_truth,
    eif_gamma,
    generate_dgp,
    lookup_preset,
    metrics_from_estimates,
    naive_estimator,
    oracle_estimator,
    read_metrics_csv,
    run_replications,
    write_metrics_csv,
)
from drdb.bench import IntervalEstimate
from drdb.errors import EmptyArm, ValidationError


class TestDgpConfig:
    @pytest.mark.parametrize("p, s", [(10, 3), (50, 7), (200, 13), (5, 0)])
    def test_linear_truth_is_two(self, p, s):
        assert DgpConfig(p=p, s=s).true_ate == 2.0

    def test_coefficient_pattern(self):
        cfg = DgpConfig(p=10, s=3)
        np.testing.assert_array_equal(cfg.beta, [1, 1, 0.5] + [0] * 7)
        np.testing.assert_array_equal(cfg.beta3[:3], [0.35, 0.35, 0.0])
        assert cfg.sigma1_sq == pytest.approx(1.8)
        assert cfg.sigma0_sq == pytest.approx(0.45)

    def test_propensity_at_origin(self):
        assert DgpConfig().truth().e(np.zeros((1, 10)))[0] == pytest.approx(0.4800, abs=5e-5)

    def test_analytic_p1_by_monte_carlo(self, rng):
        cfg = DgpConfig()
        e = cfg.truth().e(rng.standard_normal((400_000, 10)))
        assert cfg.p1 == pytest.approx(e.mean(), abs=4 * e.std() / math.sqrt(e.size))

    def test_treated_fraction(self):
        data, _ = generate_dgp(DgpConfig(n=20_000), 3)
        assert abs(data.t.mean() - DgpConfig().p1) < 3 / math.sqrt(20_000)

    def test_variance_ratio_one_fifth(self, rng):
        cfg = DgpConfig(p=10, s=3, family="quadratic")
        x = rng.standard_normal((200_000, 10))
        assert np.var(cfg.truth().m1(x)) / 5 == pytest.approx(cfg.sigma1_sq, rel=0.02)

    @pytest.mark.parametrize("kwargs", [{"s": 11, "p": 10}, {"family": "cubic"}, {"n": 0}])
    def test_rejects(self, kwargs):
        with pytest.raises(ValidationError):
            DgpConfig(**kwargs)


class TestQuadraticTruth:
    def test_p10_s3(self):
        beta12, ate = build_quadratic_truth(10, 3)
        np.testing.assert_allclose(beta12[:3], np.array([1, 1, 0.5]) * math.sqrt(1.5 / 2.25), rtol=1e-15)
        assert beta12[:3][0] == pytest.approx(0.8165, abs=1e-4)
        assert ate == pytest.approx(4.0412, abs=1e-4)

    @pytest.mark.parametrize("p, s", [(10, 3), (50, 7), (20, 4)])
    def test_variance_ratio_is_three(self, p, s):
        beta = DgpConfig(p=p, s=s).beta
        beta12, _ = build_quadratic_truth(p, s)
        assert 4 * beta @ beta == pytest.approx(3 * 2 * beta12 @ beta12, rel=1e-14)

    def test_s_zero(self):
        beta12, ate = build_quadratic_truth(10, 0)
        assert not beta12.any() and ate == 2.0


class TestEif:
    def test_zero_residual(self):
        assert eif_gamma(5.0, 1, 5.0, 3.0, 0.3) == 2.0

    def test_treated_residual(self):
        assert eif_gamma(6.0, 1, 5.0, 3.0, 0.5) == 4.0

    def test_control_residual(self):
        assert eif_gamma(4.0, 0, 5.0, 3.0, 0.75) == -2.0


def _truth(m1=5.0, m0=3.0, e=0.5):
    def fill(v):
        return lambda x: np.full(np.atleast_2d(x).shape[0], v)

    return OracleNuisance(fill(m1), fill(m0), fill(e), e)


class TestBaselines:
    def test_noiseless_oracle_is_exact(self, rng):
        n = 200
        x = rng.standard_normal((n, 1))
        t = rng.integers(0, 2, n)
        truth = OracleNuisance(lambda z: 5 + 2 * z[:, 0], lambda z: 3 + z[:, 0], lambda z: expit(0.3 * z[:, 0]), 0.5)
        y = np.where(t == 1, truth.m1(x), truth.m0(x))
        est = oracle_estimator(ObservedData(y, t, x), truth)
        plug = truth.m1(x) - truth.m0(x)
        assert est.point == pytest.approx(plug.mean(), rel=1e-14)
        half = 1.959963984540054 * plug.std(ddof=1) / math.sqrt(n)
        assert est.upper - est.point == pytest.approx(half, rel=1e-9)

    def test_single_row_oracle(self):
        data = ObservedData(np.array([6.0]), np.array([1]), np.zeros((1, 1)))
        est = oracle_estimator(data, _truth())
        assert est.point == 4.0 and est.degenerate

    def test_naive_example(self):
        data = ObservedData(np.array([2.0, 4.0, 1.0, 1.0]), np.array([1, 1, 0, 0]), np.zeros((4, 1)))
        assert naive_estimator(data).point == 2.0

    def test_naive_empty_arm(self):
        with pytest.raises(EmptyArm):
            naive_estimator(ObservedData(np.ones(3), np.ones(3, dtype=int), np.zeros((3, 1))))

    def test_naive_symmetric(self, rng):
        n = 20_000
        data = ObservedData(rng.standard_normal(n), rng.integers(0, 2, n), np.zeros((n, 1)))
        est = naive_estimator(data)
        assert est.lower < 0 < est.upper or abs(est.point) < 0.05


class TestMetrics:
    def test_variance_identity(self, rng):
        pts = rng.normal(2.1, 0.3, 50)
        ests = [IntervalEstimate(p, p - 0.5, p + 0.5) for p in pts]
        row = metrics_from_estimates("m", ests, 2.0, DgpConfig())
        err = pts - 2.0
        assert row.mse - row.bias**2 == pytest.approx(np.var(err, ddof=1) * 49 / 50, rel=1e-10)
        assert row.mse >= row.bias**2 * 0.99
        assert row.cov == np.mean(np.abs(err) <= 0.5)

    def test_flag_threshold(self):
        assert MetricsRow("m", 0, 0, 0.9, 0.3, 98, 2, 10, 1, 1).flagged
        assert not MetricsRow("m", 0, 0, 0.9, 0.3, 99, 1, 10, 1, 1).flagged

    def test_csv_round_trip(self, tmp_path):
        rows = [MetricsRow("Oracle", -0.006, 0.008, 0.936, 0.333, 500, 0, 1000, 10, 3),
                MetricsRow("DRDB-R", 0.1 / 3, 0.01, 0.9, 0.4, 480, 20, 1000, 10, 3, "quadratic")]
        path = tmp_path / "m.csv"
        write_metrics_csv(rows, path)
        assert read_metrics_csv(path) == rows


class TestMethods:
    def test_presets(self):
        assert lookup_preset("drdb-r").nuisance.method == "ridge"
        assert lookup_preset("DRDB-Rq").nuisance.features == "quadratic"
        with pytest.raises(ValidationError):
            lookup_preset("DRDB-B")

    def test_from_dict_overrides_preset(self):
        spec = MethodSpec.from_dict({"preset": "DRDB-R", "name": "R-fixed", "nuisance": {"lambda": 1.0}})
        assert (spec.name, spec.kind, spec.nuisance.lam) == ("R-fixed", "drdb", 1.0)


class TestReplications:
    def test_reps_precondition(self):
        with pytest.raises(ValidationError, match="reps >= 2 required"):
            run_replications(DgpConfig(), ["oracle"], reps=1)

    def test_small_campaign(self):
        rows = run_replications(DgpConfig(n=400, p=4, s=2), ["oracle", "naive", "DRDB-R"], reps=6, seed=1)
        assert [r.method for r in rows] == ["Oracle", "Naive", "DRDB-R"]
        assert all(r.reps == 6 and r.failures == 0 for r in rows)
        assert all(0 <= r.cov <= 1 for r in rows)

    def test_deterministic_and_worker_invariant(self):
        dgp = DgpConfig(n=300, p=3, s=2)
        a = run_replications(dgp, ["oracle", "DRDB-R"], reps=4, seed=5, workers=1)
        b = run_replications(dgp, ["oracle", "DRDB-R"], reps=4, seed=5, workers=2)
        assert a == b

    def test_failures_are_recorded(self):
        # tiny n makes every DRDB fold degenerate; the oracle still runs
        rows = run_replications(DgpConfig(n=30, p=3, s=2), ["oracle", "DRDB-R"], reps=3, seed=0)
        assert rows[0].failures == 0
        assert rows[1].failures == 3 and rows[1].flagged

    def test_oracle_unbiased(self):
        (row,) = run_replications(DgpConfig(), ["oracle"], reps=60, seed=2)
        assert abs(row.bias) <= 3 * math.sqrt(row.mse / row.reps)
