from dataclasses import replace

import numpy as np
import pytest

from phackpower import harness
from phackpower.battery import TEST_NAMES, TestResult
from phackpower.config import PowerStudyConfig
from phackpower.dgp import DGPConfig, SimPool, save_pool, simulate_pool
from phackpower.harness import NumericalBudgetExceeded, PowerTable, build_pool, run_power_study
from phackpower.pubbias import SelectionRule

LEVEL = 0.05


def small(scenario="covariate", strategy="threshold", **kw):
    base = dict(tau_grid=(0.0, 1.0), mc_reps=40, pool_reps=5000, seed=3,
                tests=("binomial", "lcm", "CS1", "discontinuity"))
    base.update(kw)
    return PowerStudyConfig(DGPConfig(scenario), strategy, **base)


@pytest.fixture(scope="module")
def cov_threshold_pool():
    return simulate_pool(DGPConfig("covariate"), "threshold", 20_000, seed=1)


@pytest.fixture(scope="module")
def cov_minimum_pool():
    return simulate_pool(DGPConfig("covariate"), "minimum", 20_000, seed=2)


class TestDeterminism:
    def test_workers_and_chunks(self):
        cfg = small()
        pool = build_pool(cfg)
        a = run_power_study(cfg, pool, workers=1, chunk=40)
        b = run_power_study(cfg, pool, workers=2, chunk=7)
        assert a.rows == b.rows

    def test_pool_built_from_seed(self):
        cfg = small(mc_reps=10)
        assert run_power_study(cfg).rows == run_power_study(cfg).rows

    def test_seed_changes_result(self):
        cfg = small(mc_reps=30, tau_grid=(0.5,))
        pool = build_pool(cfg)
        a = run_power_study(cfg, pool)
        b = run_power_study(replace(cfg, seed=4), pool)
        assert [r.n_kept_mean for r in a.rows] == [r.n_kept_mean for r in b.rows]
        assert a.rows != b.rows


class TestTable:
    def test_std_err_and_range(self):
        t = run_power_study(small(mc_reps=25))
        for r in t.rows:
            assert 0.0 <= r.rejection_rate <= 1.0
            assert r.mc_std_err == pytest.approx(np.sqrt(r.rejection_rate * (1 - r.rejection_rate) / 25))
        assert t.tests == ["binomial", "lcm", "CS1", "discontinuity"] and t.taus == [0.0, 1.0]

    def test_csv_round_trip(self, tmp_path):
        t = run_power_study(small(mc_reps=15))
        back = PowerTable.from_csv(t.to_csv(tmp_path / "t.csv"), 15)
        assert back.rows == t.rows
        assert back.to_csv(tmp_path / "u.csv").read_bytes() == (tmp_path / "t.csv").read_bytes()

    def test_lookup(self):
        t = run_power_study(small(mc_reps=5))
        assert t.rate(1.0, "CS1") == t.row(1.0, "CS1").rejection_rate
        with pytest.raises(KeyError):
            t.rate(0.3, "CS1")

    def test_selection_shrinks_sample(self):
        t = run_power_study(small(mc_reps=5, selection=SelectionRule("sharp")))
        assert t.row(0.0, "CS1").n_kept_mean < 0.2 * 5000


class TestPool:
    def test_saved_pool(self, tmp_path):
        cfg = small(mc_reps=10)
        pool = build_pool(cfg)
        path = save_pool(pool, tmp_path / "pool.bin")
        loaded = replace(cfg, pool_reps=0, pool_path=str(path))
        assert run_power_study(loaded).rows == run_power_study(cfg, pool).rows

    def test_empty_pool(self):
        cfg = small()
        pool = build_pool(cfg)
        empty = replace(pool, p_hacked=pool.p_hacked[:0], p_nohack=pool.p_nohack[:0])
        with pytest.raises(ValueError):
            run_power_study(cfg, empty)


class TestBudget:
    def test_failure_budget(self, monkeypatch):
        def failing(p, tests, settings):
            return [TestResult(t, float("nan"), False, flags=("qp_singular_nonreject",)) for t in tests]

        monkeypatch.setattr(harness, "run_battery", failing)
        with pytest.raises(NumericalBudgetExceeded) as exc:
            run_power_study(small(mc_reps=4, max_failure_rate=0.5))
        assert len(exc.value.table.rows) == 8
        assert exc.value.table.rows[0].flags_summary == "qp_singular_nonreject:4"

    def test_within_budget(self, monkeypatch):
        def failing(p, tests, settings):
            return [TestResult(t, float("nan"), False, flags=("qp_singular_nonreject",)) for t in tests]

        monkeypatch.setattr(harness, "run_battery", failing)
        run_power_study(small(mc_reps=4, max_failure_rate=1.0))


class TestPowerShape:
    def test_size_exact_null(self):
        # h = 0 without search: p-values are exactly uniform
        reps = 300
        u = np.random.default_rng(30).random(1_000_000)
        pool = SimPool(u, u, np.zeros_like(u), np.ones(u.size, dtype=int), DGPConfig("covariate"), "threshold", 0)
        cfg = small(tau_grid=(0.0,), mc_reps=reps, tests=TEST_NAMES)
        for r in run_power_study(cfg, pool).rows:
            assert r.rejection_rate <= LEVEL + 3 * np.sqrt(LEVEL * (1 - LEVEL) / reps), r.test

    def test_size_simulated_pool(self, cov_threshold_pool):
        # Fisher is left out: normal-reference p-values of t statistics with
        # about 196 dof have slightly too much mass near 0, and at n = 5000
        # Fisher detects it
        reps = 300
        tests = tuple(t for t in TEST_NAMES if t != "fisher")
        cfg = small(tau_grid=(0.0,), mc_reps=reps, tests=tests)
        for r in run_power_study(cfg, cov_threshold_pool).rows:
            assert r.rejection_rate <= LEVEL + 3 * np.sqrt(LEVEL * (1 - LEVEL) / reps), r.test

    def test_cs2b_monotone_in_tau(self, cov_threshold_pool):
        reps = 200
        cfg = small(tau_grid=(0.0, 0.25, 0.5, 0.75, 1.0), mc_reps=reps, tests=("CS2B",))
        rates = [r.rejection_rate for r in run_power_study(cfg, cov_threshold_pool).rows]
        for lo, hi in zip(rates, rates[1:]):
            se = np.sqrt((lo * (1 - lo) + hi * (1 - hi)) / reps)
            assert hi >= lo - 3 * se

    def test_minimum_no_power(self, cov_minimum_pool):
        reps = 300
        cfg = small(strategy="minimum", tau_grid=(1.0,), mc_reps=reps)
        for r in run_power_study(cfg, cov_minimum_pool).rows:
            assert r.rejection_rate <= LEVEL + 3 * np.sqrt(LEVEL * (1 - LEVEL) / reps), r.test

    def test_iv_sharp_selection(self):
        cfg = small("iv", tau_grid=(0.5,), mc_reps=500, pool_reps=100_000, tests=("CSUB",),
                    selection=SelectionRule("sharp"))
        assert run_power_study(cfg).rate(0.5, "CSUB") >= 0.99
