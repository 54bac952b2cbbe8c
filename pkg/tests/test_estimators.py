import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from bepboot import (
    DirichletPrior,
    EstimationError,
    IntersectionUnionRule,
    NormalPilotSummary,
    OneSampleRule,
    PilotDataset,
    StudyCollection,
    TrialPlan,
    bbs_bep,
    bbs_power_distribution,
    bootstrap_power,
    bs2_power_distribution,
    conjugate_normal_bep,
)
from conftest import normal_pilot

PLAN = TrialPlan(500)


def _combined_se(*ses):
    return math.sqrt(sum(s * s for s in ses))


class TestDegenerate:
    pilot = PilotDataset(np.full(100, 5.0))

    def test_bbs_bep_is_one(self):
        assert bbs_bep(self.pilot, PLAN, m=200).bep == 1.0

    def test_power_distribution_all_ones(self):
        d = bbs_power_distribution(self.pilot, PLAN, m=50, t=5)
        assert_array_equal(d.samples, 1.0)

    def test_bs2_all_equal(self):
        for value, expected in ((5.0, 1.0), (0.0, 0.0)):
            d = bs2_power_distribution(PilotDataset(np.full(20, value)), PLAN, m=30, t=4)
            assert_array_equal(d.samples, expected)


class TestContracts:
    @pytest.mark.parametrize("seed", [0, 1, 2**63 + 5])
    def test_t1_reduction_is_exact(self, pilot100, seed):
        est = bbs_bep(pilot100, PLAN, m=700, seed=seed)
        dist = bbs_power_distribution(pilot100, PLAN, m=700, t=1, seed=seed)
        assert est.bep == dist.bep and est.m == dist.m
        assert set(np.unique(dist.samples)) <= {0.0, 1.0}

    def test_samples_are_multiples_of_inverse_t(self, pilot100):
        t = 7
        d = bbs_power_distribution(pilot100, TrialPlan(100), m=300, t=t, seed=4)
        assert d.m == 300 and d.t == t
        k = d.samples * t
        assert np.allclose(k, np.round(k), atol=1e-12)
        assert d.bep == pytest.approx(d.samples.mean(), abs=1e-12)

    def test_same_seed_same_output(self, pilot100):
        a = bs2_power_distribution(pilot100, PLAN, m=200, t=3, seed=9)
        b = bs2_power_distribution(pilot100, PLAN, m=200, t=3, seed=9)
        assert_array_equal(a.samples, b.samples)

    def test_workers_do_not_change_results(self, pilot100):
        a = bbs_power_distribution(pilot100, PLAN, m=900, t=2, seed=3, workers=1)
        b = bbs_power_distribution(pilot100, PLAN, m=900, t=2, seed=3, workers=3)
        assert_array_equal(a.samples, b.samples)
        assert bootstrap_power(pilot100, PLAN, m=900, seed=3, workers=1) == bootstrap_power(pilot100, PLAN, m=900, seed=3, workers=2)

    def test_prefix_stability(self, pilot100):
        # iteration j depends only on (seed, j), so a longer run extends a shorter one
        a = bbs_power_distribution(pilot100, PLAN, m=100, t=2, seed=8)
        b = bbs_power_distribution(pilot100, PLAN, m=250, t=2, seed=8)
        assert_array_equal(a.samples, b.samples[:100])

    @pytest.mark.parametrize("kw", [dict(m=0), dict(m=10, t=0)])
    def test_invalid_sizes(self, pilot100, kw):
        with pytest.raises(ValueError):
            bbs_power_distribution(pilot100, PLAN, **kw)

    def test_values_in_unit_interval(self, pilot100):
        for est in (bbs_bep(pilot100, PLAN, m=100), bootstrap_power(pilot100, PLAN, m=100)):
            assert 0.0 <= est.bep <= 1.0
            assert est.mc_se == pytest.approx(math.sqrt(est.bep * (1 - est.bep) / est.m))


class TestErrors:
    def test_rule_failure_reports_first_bad_iteration(self):
        # one non-positive row breaks the log-scale test whenever it is resampled
        rows = np.exp(normal_pilot(40, seed=2).rows.repeat(2, axis=1))
        rows[7] = [-1.0, 1.0]
        pilot = PilotDataset(rows)
        plan = TrialPlan(20, rule=IntersectionUnionRule((0.0, 0.0), log_transform=True))
        with pytest.raises(EstimationError) as info:
            bbs_bep(pilot, plan, m=500, seed=1)
        j = info.value.iteration
        # the first j iterations run cleanly; iteration j alone fails
        if j:
            bbs_bep(pilot, plan, m=j, seed=1)
        with pytest.raises(EstimationError):
            bbs_bep(pilot, plan, m=j + 1, seed=1)

    def test_prior_length_mismatch_fails_before_sampling(self, pilot100):
        with pytest.raises(ValueError, match="hyper-parameters"):
            bbs_bep(pilot100, PLAN, DirichletPrior([0.0] * 3), m=5)


class TestAgreement:
    def test_bbs_close_to_conjugate(self, pilot100):
        est = bbs_bep(pilot100, PLAN, m=10_000, seed=1)
        model = conjugate_normal_bep(NormalPilotSummary.from_data(pilot100), PLAN, m=100_000, seed=1)
        assert abs(est.bep - model.bep) < 0.03

    @pytest.mark.slow
    def test_nested_matches_single_loop(self, pilot100):
        nested = bbs_power_distribution(pilot100, PLAN, m=2000, t=200, seed=5)
        single = bbs_bep(pilot100, PLAN, m=400_000, seed=6)
        assert abs(nested.bep - single.bep) < 3 * _combined_se(nested.mc_se, single.mc_se)

    def test_bs2_matches_bbs(self, pilot100):
        bbs = bbs_power_distribution(pilot100, PLAN, m=4000, t=5, seed=1)
        bs2 = bs2_power_distribution(pilot100, PLAN, m=4000, t=5, seed=2)
        assert abs(bbs.bep - bs2.bep) < 3 * _combined_se(bbs.mc_se, bs2.mc_se)

    def test_bootstrap_power_at_null_is_size(self):
        half = normal_pilot(100, seed=3, mean=0.0).rows[:, 0]
        pilot = PilotDataset(np.concatenate([half, -half]))  # sample mean exactly 0
        est = bootstrap_power(pilot, PLAN, m=20_000, seed=2)
        assert abs(est.bep - 0.05) < 3 * math.sqrt(0.05 * 0.95 / est.m)

    def test_monotone_in_future_n(self):
        pilot = normal_pilot(100, seed=4, mean=0.3)
        assert NormalPilotSummary.from_data(pilot).mean > 0.1
        for fn in (bbs_bep, bootstrap_power):
            ests = [fn(pilot, TrialPlan(n), m=5000, seed=0) for n in (100, 500, 1000)]
            for a, b in zip(ests, ests[1:]):
                assert b.bep >= a.bep - 3 * _combined_se(a.mc_se, b.mc_se)

    def test_bootstrap_power_spread_exceeds_mc_noise(self):
        values, ses = [], []
        for seed in range(30):
            est = bootstrap_power(normal_pilot(10, seed=seed), PLAN, m=400, seed=seed)
            values.append(est.bep)
            ses.append(est.mc_se)
        assert np.var(values, ddof=1) > np.mean(np.square(ses))


class TestMultiStudy:
    def test_single_study_collection_is_the_study(self, pilot100):
        a = bbs_bep(pilot100, PLAN, m=300, seed=2)
        b = bbs_bep(StudyCollection((pilot100,)), PLAN, m=300, seed=2)
        assert a == b

    def test_zero_weight_study_is_ignored(self):
        good = PilotDataset(np.full(10, 3.0), ("y",), "good")
        null = PilotDataset(np.zeros(10), ("y",), "null")
        studies = StudyCollection((good, null), (1.0, 0.0))
        assert bbs_bep(studies, TrialPlan(50), m=100).bep == 1.0
        assert bs2_power_distribution(studies, TrialPlan(50), m=50, t=2).bep == 1.0

    def test_mixture_runs_all_schemes(self):
        a = normal_pilot(30, seed=1, mean=0.5)
        b = PilotDataset(normal_pilot(50, seed=2, mean=0.1).rows, ("y",), "b")
        studies = StudyCollection((a, b))
        plan = TrialPlan(60, rule=OneSampleRule(variant="t"))
        for est in (bbs_bep(studies, plan, m=200), bootstrap_power(studies, plan, m=200),
                    bs2_power_distribution(studies, plan, m=100, t=2).to_estimate()):
            assert 0.0 <= est.bep <= 1.0
