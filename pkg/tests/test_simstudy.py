import csv

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from bepboot import simstudy
from bepboot.core import make_rng_stream
from bepboot.simstudy import (
    CdfCrossing,
    SimStudyConfig,
    SimStudyError,
    ecdf_crossing,
    generate_pilot,
    run_sim_study,
    summarize_cdf_crossing,
)


def _tiny(study=1, **kw):
    base = dict(replications=3, m=60, pilot_sizes=(10, 20) if study == 1 else (10, 15), seed=5)
    base.update(kw)
    return SimStudyConfig(study=study, **base)


class TestConfig:
    def test_full_scale_defaults(self):
        s1, s2 = SimStudyConfig(1), SimStudyConfig(2)
        assert (s1.pilot_sizes, s1.replications, s1.future_n) == ((10, 30, 100), 2500, 500)
        assert (s2.pilot_sizes, s2.replications, s2.future_n) == ((10, 30, 50), 1000, 80)
        assert (s1.mean, s1.sd) == (0.15, 1.0)
        assert (s2.log_mean, s2.log_sd, s2.log_corr, s2.thresholds) == ((3.0, 5.0), (1.0, 1.0), 0.65, (2.7, 4.5))
        assert "wrong_model_bep" in s2.metrics and "wrong_model_bep" not in s1.metrics

    def test_presets(self):
        desk = SimStudyConfig.desk(1)
        assert (desk.replications, desk.m) == (200, 2000)
        assert SimStudyConfig.full_scale(2).replications == 1000

    @pytest.mark.parametrize("kw", [dict(study=3), dict(replications=0), dict(pilot_sizes=(1,)),
                                    dict(metrics=("wrong_model_bep",)), dict(m=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SimStudyConfig(**kw)

    def test_metric_subset_keeps_canonical_order(self):
        cfg = SimStudyConfig(2, metrics=("wrong_model_bep", "model_based_bep"))
        assert cfg.metrics == ("model_based_bep", "wrong_model_bep")


class TestGenerators:
    def test_study2_log_scale_parameters(self):
        cfg = SimStudyConfig(2)
        pilot = generate_pilot(cfg, 200_000, make_rng_stream(1, 0))
        logs = np.log(pilot.rows)
        assert np.all(np.abs(logs.mean(axis=0) - [3.0, 5.0]) < 0.01)
        assert abs(np.corrcoef(logs.T)[0, 1] - 0.65) < 0.005
        assert np.all(np.abs(logs.std(axis=0) - 1.0) < 0.01)

    def test_study1_moments(self):
        pilot = generate_pilot(SimStudyConfig(1), 200_000, make_rng_stream(1, 0))
        assert abs(pilot.rows.mean() - 0.15) < 0.01 and abs(pilot.rows.std() - 1.0) < 0.01


class TestRun:
    def test_one_replication_one_row_per_size(self):
        report = run_sim_study(_tiny(replications=1))
        rows = report.rows()
        assert [r["pilot_size"] for r in rows] == [10, 20]
        assert set(report.metrics) <= set(rows[0])

    @pytest.mark.parametrize("study", [1, 2])
    def test_metrics_are_probabilities(self, study):
        report = run_sim_study(_tiny(study))
        for n in report.config.pilot_sizes:
            v = report.values[n]
            assert v.shape == (3, len(report.metrics))
            assert np.all((v >= 0) & (v <= 1))

    def test_deterministic_and_worker_independent(self):
        a = run_sim_study(_tiny(2))
        b = run_sim_study(_tiny(2))
        c = run_sim_study(_tiny(2), workers=2)
        for n in a.config.pilot_sizes:
            assert_array_equal(a.values[n], b.values[n])
            assert_array_equal(a.values[n], c.values[n])

    def test_metric_subset_values_unchanged(self):
        full = run_sim_study(_tiny())
        part = run_sim_study(_tiny(metrics=("bbs_bep",)))
        assert_array_equal(part.metric(10, "bbs_bep"), full.metric(10, "bbs_bep"))

    def test_summary_is_computed_from_stored_values(self):
        report = run_sim_study(_tiny())
        row = next(s for s in report.summary() if s["pilot_size"] == 20 and s["difference"] == "bbs_bep-bootstrap_power")
        d = report.metric(20, "bbs_bep") - report.metric(20, "bootstrap_power")
        assert row["mean"] == d.mean()
        assert row["sd"] == np.std(d, ddof=1)
        assert row["mean_abs"] == np.abs(d).mean()

    def test_failure_names_pilot_and_replication(self, monkeypatch):
        def boom(name, config, pilot, plan, seed):
            raise RuntimeError("boom")

        monkeypatch.setattr(simstudy, "_metric", boom)
        with pytest.raises(SimStudyError) as info:
            run_sim_study(_tiny())
        assert (info.value.pilot_size, info.value.replication) == (10, 0)

    def test_csv_outputs(self, tmp_path):
        report = run_sim_study(_tiny())
        report.write_csv(tmp_path / "long.csv")
        with open(tmp_path / "long.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 * 3 * len(report.metrics)
        assert rows[0].keys() == {"study", "pilot_size", "replication", "metric", "value"}
        report.write_ecdf_csv(tmp_path / "ecdf.csv", grid=[0.0, 0.5, 1.0])
        with open(tmp_path / "ecdf.csv", newline="") as fh:
            ecdf = list(csv.DictReader(fh))
        assert len(ecdf) == 2 * len(report.metrics) * 3
        assert all(r["ecdf"] == "1.000000" for r in ecdf if r["x"] == "1.0000")

    def test_ecdf_grid(self):
        report = run_sim_study(_tiny())
        f = report.ecdf_grid(10, "bbs_bep")
        assert f.shape == (101,) and f[-1] == 1.0 and np.all(np.diff(f) >= 0)


class TestCrossing:
    def test_identical_is_degenerate(self):
        x = np.linspace(0.1, 0.9, 50)
        assert ecdf_crossing(x, x).status == "degenerate"

    def test_disjoint_is_absent(self):
        assert ecdf_crossing(np.zeros(50), np.ones(50)).status == "absent"

    def test_spread_vs_concentrated_cross_at_centre(self):
        wide = np.linspace(0.0, 1.0, 201)
        narrow = np.linspace(0.3, 0.7, 201)
        c = ecdf_crossing(wide, narrow)
        assert c.status == "found" and c.value == pytest.approx(0.5, abs=0.01)

    def test_largest_excursion_wins(self):
        # a small wobble near 0.1 and a large crossing near 0.6
        a = np.concatenate([[0.09], np.linspace(0.2, 1.0, 99)])
        b = np.concatenate([[0.11], np.linspace(0.45, 0.75, 99)])
        c = ecdf_crossing(a, b)
        assert c.status == "found" and 0.5 < c.value < 0.7

    def test_needs_100_replications(self):
        report = run_sim_study(_tiny())
        with pytest.raises(ValueError):
            summarize_cdf_crossing(report)

    def test_summary_per_size(self):
        cfg = SimStudyConfig(1, pilot_sizes=(30,), replications=100, m=50, metrics=("bbs_bep", "bootstrap_power"))
        out = summarize_cdf_crossing(run_sim_study(cfg))
        assert set(out) == {30} and isinstance(out[30], CdfCrossing)
