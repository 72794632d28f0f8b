import numpy as np
import pytest

from drdb import EstimandSpec, NuisanceConfig, NuisanceDraw, RunConfig, build_weights, estimate, parse_estimand
from drdb import estimate_target, estimate_weighted
from drdb.bench import DgpConfig, generate_dgp
from drdb.errors import EmptySubgroup, ValidationError
from drdb.estimands import assemble_weighted_posterior
from drdb.procedure import FoldNuisance


def const(value, kind="propensity"):
    return NuisanceDraw(kind, lambda x: np.full(np.atleast_2d(x).shape[0], float(value)))


class TestParse:
    @pytest.mark.parametrize("text", ["ate", "mu1", "mu0"])
    def test_plain(self, text):
        assert parse_estimand(text) == text

    def test_att(self):
        assert parse_estimand("att") == EstimandSpec("att")

    @pytest.mark.parametrize(
        "text, col, thr, direction",
        [("subgroup:x1>0", 0, 0.0, ">"), ("subgroup:x3<=-1.5", 2, -1.5, "<="), ("subgroup:x2>1e-3", 1, 1e-3, ">")],
    )
    def test_subgroup(self, text, col, thr, direction):
        spec = parse_estimand(text)
        assert (spec.column, spec.threshold, spec.direction) == (col, thr, direction)

    @pytest.mark.parametrize("text", ["atx", "subgroup:x0>1", "subgroup:y>1", "subgroup:x1=2"])
    def test_rejects(self, text):
        with pytest.raises(ValidationError):
            parse_estimand(text)

    def test_rule_required_only_for_subgroup(self):
        with pytest.raises(ValidationError):
            EstimandSpec("subgroup")
        with pytest.raises(ValidationError):
            EstimandSpec("att", column=0, threshold=0.0, direction=">")


class TestWeights:
    def test_att_example(self):
        weights = build_weights(EstimandSpec("att"), const(0.8), 0.5)
        x = np.zeros((2, 1))
        np.testing.assert_allclose(weights.w(x), 1.6)
        np.testing.assert_allclose(weights.r0_h(x), 4.0)
        np.testing.assert_array_equal(weights.r1_h(x), 1.0)

    def test_randomised_att_collapses(self):
        weights = build_weights(EstimandSpec("att"), const(0.3), 0.3)
        x = np.zeros((3, 1))
        np.testing.assert_allclose(weights.w(x), 1.0, rtol=1e-15)
        np.testing.assert_allclose(weights.r0_h(x), 1.0, rtol=1e-15)

    def test_atc_mirrors_att(self):
        weights = build_weights(EstimandSpec("atc"), const(0.2), 0.5)
        x = np.zeros((1, 1))
        np.testing.assert_allclose(weights.w(x), 1.6)
        np.testing.assert_allclose(weights.r1_h(x), 4.0)

    def test_subgroup_on_symmetric_x(self, rng):
        x = rng.standard_normal((20_000, 2))
        weights = build_weights(parse_estimand("subgroup:x1>0"), const(0.5), 0.5, x_train=x)
        assert weights.pA_hat == pytest.approx(0.5, abs=0.02)
        w = weights.w(x)
        assert set(np.unique(np.round(w, 6))) <= {0.0, round(1 / weights.pA_hat, 6)}
        assert w.mean() == pytest.approx(1.0, rel=1e-12)

    def test_att_weights_average_one(self, rng):
        cfg = DgpConfig(n=200_000, p=3, s=2)
        truth = cfg.truth()
        x = rng.standard_normal((cfg.n, cfg.p))
        e = NuisanceDraw("propensity", truth.e)
        w = build_weights(EstimandSpec("att"), e, cfg.p1).w(x)
        assert np.all(w >= 0)
        assert abs(w.mean() - 1.0) < 4 * w.std() / np.sqrt(w.size)

    def test_empty_training_subgroup(self):
        with pytest.raises(EmptySubgroup):
            build_weights(parse_estimand("subgroup:x1>10"), const(0.5), 0.5, x_train=np.zeros((5, 1)))


def test_off_subgroup_rows_contribute_zero(small_sim):
    data, _ = small_sim
    spec = parse_estimand("subgroup:x1>0")
    nuis = FoldNuisance(const(3.0, "regression"), const(1.0, "regression"), const(0.5), 0.5)
    idx = np.arange(60)
    fp = assemble_weighted_posterior(data, idx, nuis, spec, x_train=data.x[60:])
    inside = spec.indicator(data.x[idx])
    pA = float(np.mean(spec.indicator(data.x[60:])))
    expected = np.where(inside, 2.0 / pA, 0.0)
    assert fp.cond_base.eta == pytest.approx(expected.mean(), rel=1e-13)


def test_subgroup_with_no_test_rows(small_sim):
    data, _ = small_sim
    spec = parse_estimand("subgroup:x1>100")
    nuis = FoldNuisance(const(1.0, "regression"), const(1.0, "regression"), const(0.5), 0.5)
    with pytest.raises(EmptySubgroup):
        assemble_weighted_posterior(data, np.arange(40), nuis, spec, x_train=np.ones((5, data.p)) * 200)


def test_constant_effect_att_near_ate(sim_data):
    data, _ = sim_data
    cfg = RunConfig(seed=9)
    ate = estimate(data, cfg)
    att = estimate_weighted(data, "att", cfg)
    assert abs(att.mean - ate.mean) < 5 * att.sd


def test_randomised_att_equals_ate_with_oracle():
    # every fold gets exactly 40% treated, so the test-fold p1 equals e = 0.4
    from drdb import ObservedData, OracleNuisance, split_folds
    from drdb.procedure import MIN_TEST_ARM, plan_seed

    data, truth = generate_dgp(DgpConfig(n=600, p=3, s=2), 44)
    cfg = RunConfig(seed=5, nuisance=NuisanceConfig(method="oracle", p1_source="test"))
    plan = split_folds(data.n, cfg.k, plan_seed(cfg.seed), min_per_fold=MIN_TEST_ARM)
    t = np.zeros(data.n, dtype=int)
    rng = np.random.default_rng(3)
    for fold in range(cfg.k):
        idx = plan.test_indices(fold)
        t[rng.choice(idx, size=2 * idx.size // 5, replace=False)] = 1
    rdata = ObservedData(data.y, t, data.x)
    rand = OracleNuisance(truth.m1, truth.m0, lambda x: np.full(np.atleast_2d(x).shape[0], 0.4), 0.4)
    ate = estimate_target(rdata, cfg.with_(estimand="ate"), rand)
    att = estimate_target(rdata, cfg.with_(estimand="att"), rand)
    assert att.closed_form_mean == pytest.approx(ate.closed_form_mean, abs=1e-10)


@pytest.mark.parametrize("estimand", ["att", "atc", "subgroup:x1>0", "subgroup:x2<=0.5"])
def test_weighted_estimates_run(sim_data, estimand):
    data, _ = sim_data
    s = estimate_target(data, RunConfig(estimand=estimand, m_draws=200))
    assert s.estimand == parse_estimand(estimand).label
    assert s.ci_lower < s.ci_upper
