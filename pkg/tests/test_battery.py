import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as sint
from scipy import stats

from phackpower.battery import (
    BatterySettings,
    ConstraintSystem,
    HistogramSpec,
    TEST_NAMES,
    binomial_test,
    build_constraints,
    cox_shi_test,
    discontinuity_test,
    fisher_test,
    jump_contrast,
    lcm_statistic,
    lcm_test,
    run_battery,
)

from .oracles import hull_gap


def binomial_exact_size(n, width=0.005, level=0.05):
    """Exact rejection probability of the two-bin test on uniform data."""
    m = np.arange(n + 1)
    pm = stats.binom.pmf(m, n, 2 * width)
    rej = np.zeros(n + 1)
    for mm in range(1, min(n, 400) + 1):
        k = np.arange(mm + 1)
        crit = stats.binom.sf(k - 1, mm, 0.5) <= level
        rej[mm] = stats.binom.pmf(k, mm, 0.5)[crit].sum()
    return float(pm @ rej)


class TestHistogramSpec:
    def test_right_closed_bins(self):
        spec = HistogramSpec(0.0, 0.15, 15)
        counts = spec.counts([0.01, 0.010000001, 0.15, 0.1500001, 0.0])
        assert counts[0] == 1 and counts[1] == 1 and counts[-1] == 1 and counts.sum() == 3

    @pytest.mark.parametrize("args", [(0.2, 0.1, 3), (0.0, 1.1, 3), (0.0, 0.15, 1)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            HistogramSpec(*args)


class TestBinomial:
    def _sample(self, k, m):
        return np.r_[np.full(m - k, 0.042), np.full(k, 0.047)]

    def test_hand_tail(self):
        r = binomial_test(self._sample(7, 10))
        assert r.pvalue == pytest.approx(176 / 1024, abs=1e-15)
        assert r.meta == {"m": 10, "k": 7} and not r.reject

    def test_zero_near_cutoff(self):
        assert binomial_test(self._sample(0, 10)).pvalue == pytest.approx(1.0, abs=1e-15)

    def test_boundaries(self):
        r = binomial_test([0.04, 0.045, 0.05, 0.0500001, 0.0399999])
        assert r.meta == {"m": 3, "k": 2}

    def test_empty(self):
        r = binomial_test([0.5, 0.9])
        assert not r.reject and "insufficient_sample" in r.flags

    def test_overlapping_bins(self):
        with pytest.raises(ValueError):
            binomial_test([0.04], (0.04, 0.046), (0.045, 0.05))

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60), st.randoms())
    def test_permutation_invariant(self, p, rnd):
        q = list(p)
        rnd.shuffle(q)
        a, b = binomial_test(p), binomial_test(q)
        assert (a.statistic, a.pvalue, a.reject) == (b.statistic, b.pvalue, b.reject)

    def test_size(self):
        rng = np.random.default_rng(11)
        reps, n = 10_000, 5000
        rate = np.mean([binomial_test(rng.random(n)).reject for _ in range(reps)])
        exact = binomial_exact_size(n)
        # discreteness keeps the exact size below the level
        assert exact < 0.05
        assert abs(rate - exact) <= 3 * np.sqrt(exact * (1 - exact) / reps)


class TestFisher:
    def test_all_ones(self):
        r = fisher_test(np.ones(7))
        assert r.statistic == 0.0 and r.pvalue == pytest.approx(1.0)

    def test_single(self):
        r = fisher_test([np.exp(-1.0)])
        assert r.statistic == pytest.approx(2.0, abs=1e-14)
        assert r.pvalue == pytest.approx(np.exp(-1.0), abs=1e-14)

    def test_zero_rejects_with_flag(self):
        r = fisher_test([0.0, 0.5])
        assert r.reject and r.statistic == np.inf and r.flags == ("infinite_statistic",)

    def test_window_rescaling(self):
        r = fisher_test([0.075, 0.3], window=(0.0, 0.15))
        assert r.meta["n"] == 1 and r.statistic == pytest.approx(-2 * np.log(0.5))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            fisher_test([1.2])

    def test_size(self):
        rng = np.random.default_rng(12)
        reps = 10_000
        stat = -2 * np.log(rng.random((reps, 5000))).sum(axis=1)
        rate = np.mean(stats.chi2.sf(stat, 10_000) <= 0.05)
        assert abs(rate - 0.05) <= 0.01
        # the helper agrees with the vectorized statistic
        p = rng.random(5000)
        assert fisher_test(p).statistic == pytest.approx(-2 * np.log(p).sum(), rel=1e-12)


class TestLCM:
    def test_two_points(self):
        stat, n = lcm_statistic([0.25, 0.75])
        assert n == 2 and stat == pytest.approx(np.sqrt(2) * 0.5, abs=1e-12)
        assert hull_gap([0.25, 0.75]) == pytest.approx(0.5, abs=1e-12)

    @given(st.lists(st.floats(0.001, 1.0), min_size=2, max_size=25))
    @settings(max_examples=40)
    def test_matches_brute_hull(self, vals):
        stat, n = lcm_statistic(vals)
        assert stat == pytest.approx(np.sqrt(n) * hull_gap(vals), abs=1e-12)

    @pytest.mark.parametrize("n", [10, 100, 1000])
    def test_uniform_grid(self, n):
        stat, _ = lcm_statistic(np.arange(1, n + 1) / n)
        assert stat <= 1 / np.sqrt(n) + 1e-12

    @given(st.lists(st.floats(0.001, 1.0), min_size=2, max_size=40), st.floats(0.0, 0.5), st.floats(0.1, 0.5))
    def test_affine_window_invariance(self, vals, lo, width):
        moved = lo + width * np.asarray(vals)
        a = lcm_statistic(vals)
        b = lcm_statistic(moved, lo, lo + width)
        assert b[1] == a[1] and b[0] == pytest.approx(a[0], abs=1e-9)

    def test_insufficient(self):
        r = lcm_test([0.01])
        assert not r.reject and r.flags == ("insufficient_sample",)

    def test_decreasing_alternative(self):
        rng = np.random.default_rng(13)
        reps = 300
        rej = []
        for _ in range(reps):
            p = stats.norm.sf(rng.standard_normal(5000) + 1.0)
            rej.append(lcm_test(p, window=(0.0, 1.0)).reject)
        assert np.mean(rej) < 0.05

    def test_size(self):
        rng = np.random.default_rng(14)
        reps = 2000
        rate = np.mean([lcm_test(rng.random(5000) * 0.15).reject for _ in range(reps)])
        assert abs(rate - 0.05) <= 3 * np.sqrt(0.05 * 0.95 / reps)


def grid_sup_bound_row(lo, hi, cap):
    """Integral of the grid supremum over h of the one-sided single-effect
    density divided by its window mass."""
    hs = np.arange(0.0, 40.0 + 1e-9, 0.1)

    def sup(p):
        z = stats.norm.isf(p)
        g = np.exp(hs * z - hs * hs / 2) / stats.norm.cdf(hs - stats.norm.isf(cap))
        return g.max()

    return sint.quad(sup, lo, hi, epsabs=1e-10, limit=200)[0]


class TestConstraints:
    def test_cs1_three_bins_window(self):
        sys = build_constraints("CS1", HistogramSpec(0.0, 0.15, 3), scope="window")
        np.testing.assert_array_equal(sys.A, [[-1.0, 1.0], [-1.0, -2.0]])
        np.testing.assert_array_equal(sys.b, [0.0, -1.0])

    def test_cs1_three_bins_total(self):
        sys = build_constraints("CS1", HistogramSpec(0.0, 0.15, 3), scope="total")
        np.testing.assert_array_equal(sys.A, [[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0]])

    @pytest.mark.parametrize("J", [4, 15])
    @pytest.mark.parametrize("scope", ["window", "total"])
    def test_row_counts(self, J, scope):
        spec = HistogramSpec(0.0, 0.15, J)
        bound = 3 * J - 3
        assert build_constraints("CS1", spec, scope=scope).n_rows == J - 1
        assert build_constraints("CSUB", spec, scope=scope).n_rows == bound
        assert build_constraints("CS2B", spec, scope=scope).n_rows == (J - 1) + (J - 2) + bound

    @pytest.mark.parametrize("scope", ["window", "total"])
    def test_cs2b_contains_csub(self, scope):
        sub = build_constraints("CSUB", scope=scope)
        full = build_constraints("CS2B", scope=scope)
        rows = {(tuple(a), b) for a, b in zip(full.A, full.b)}
        assert all((tuple(a), b) in rows for a, b in zip(sub.A, sub.b))

    def test_first_bin_rows_vacuous(self):
        sys = build_constraints("CSUB")
        for order in range(3):
            first = sys.labels.index(f"bound{order}")
            assert sys.vacuous[first]
        assert not sys.vacuous[1]

    def test_bound_row_matches_grid_sup(self):
        sys = build_constraints("CSUB", HistogramSpec(0.0, 0.15, 15), sided="one", scope="window")
        # second order-0 row; the first one diverges at p = 0
        raw = build_constraints("CSUB", HistogramSpec(0.0, 0.15, 15), sided="one", scope="total")
        assert raw.b[1] == pytest.approx(grid_sup_bound_row(0.01, 0.02, 1.0), abs=1e-4)
        # window scope: row 1 is pi_2 <= b; substitution leaves it unchanged
        np.testing.assert_array_equal(sys.A[1][:2], [0.0, 1.0])
        assert sys.b[1] == pytest.approx(grid_sup_bound_row(0.01, 0.02, 0.15), abs=1e-4)

    def test_custom_source(self):
        flat = lambda p, order, sided, cap, floor: np.full_like(np.asarray(p, dtype=float), 0.5 if order == 0 else 0.0)
        sys = build_constraints("CSUB", HistogramSpec(0.0, 0.15, 3), bound_source=flat)
        assert sys.b[1] == pytest.approx(0.5 * 0.05, abs=1e-12)

    @pytest.mark.parametrize("kw", [{"kind": "CS3"}, {"kind": "CS1", "sided": "both"}, {"kind": "CS1", "scope": "all"}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            build_constraints(**kw)

    def test_system_validation(self):
        with pytest.raises(ValueError):
            ConstraintSystem(np.ones((2, 2)), np.ones(3), ("monotonicity",) * 2, np.zeros(2, bool))
        with pytest.raises(ValueError):
            ConstraintSystem(np.ones((1, 2)), np.ones(1), ("other",), np.zeros(1, bool))


class TestCoxShi:
    def toy(self):
        return ConstraintSystem(np.array([[-1.0]]), np.array([-0.5]), ("monotonicity",), np.zeros(1, bool), "window")

    def test_hand_toy(self):
        p = np.r_[np.full(45, 0.25), np.full(55, 0.75)]
        r = cox_shi_test(p, self.toy(), HistogramSpec(0.0, 1.0, 2), variance="plugin")
        assert r.statistic == pytest.approx(100 * 0.05**2 / 0.2475, rel=1e-6)
        assert r.meta["dof"] == 1 and r.critical_value == pytest.approx(3.841459, abs=1e-6)
        assert not r.reject

    def test_hand_toy_restricted(self):
        # omega evaluated at the projection 0.5
        p = np.r_[np.full(45, 0.25), np.full(55, 0.75)]
        r = cox_shi_test(p, self.toy(), HistogramSpec(0.0, 1.0, 2))
        assert r.statistic == pytest.approx(100 * 0.05**2 / 0.25, rel=1e-6)

    def test_toy_rejects_far_away(self):
        p = np.r_[np.full(20, 0.25), np.full(80, 0.75)]
        assert cox_shi_test(p, self.toy(), HistogramSpec(0.0, 1.0, 2)).reject

    @given(st.lists(st.integers(1, 60), min_size=15, max_size=15))
    @settings(max_examples=30)
    def test_interior_gives_zero(self, gaps):
        counts = np.cumsum(gaps)[::-1] + 5
        spec = HistogramSpec()
        p = np.repeat(spec.edges[1:] - spec.width / 2, counts)
        r = cox_shi_test(p, "CS1", spec, scope="window")
        assert r.statistic == 0.0 and not r.reject

    def test_insufficient(self):
        r = cox_shi_test([0.01, 0.02], "CS1")
        assert r.flags == ("insufficient_sample",) and not r.reject

    def test_column_mismatch(self):
        with pytest.raises(ValueError):
            cox_shi_test(np.random.default_rng(0).random(500), self.toy())

    @pytest.mark.parametrize("kw", [{"variance": "robust"}, {"level": 1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            cox_shi_test(np.random.default_rng(0).random(500), "CS1", **kw)

    def test_increasing_rejects(self):
        rng = np.random.default_rng(15)
        p = 0.15 * np.sqrt(rng.random(5000))
        assert cox_shi_test(p, "CS1").reject

    def test_cs1_size(self):
        rng = np.random.default_rng(16)
        reps = 5000
        rate = np.mean([cox_shi_test(rng.random(5000), "CS1").reject for _ in range(reps)])
        assert rate <= 0.06

    @pytest.mark.parametrize("kind", ["CSUB", "CS2B"])
    def test_bound_family_size(self, kind):
        rng = np.random.default_rng(17)
        reps = 500
        rate = np.mean([cox_shi_test(rng.random(5000), kind).reject for _ in range(reps)])
        assert rate <= 0.05 + 3 * np.sqrt(0.05 * 0.95 / reps)


def thinned_uniform(n, rng, keep=0.1, cutoff=0.05):
    out = np.empty(0)
    while out.size < n:
        u = rng.random(4 * n)
        out = np.r_[out, u[(u <= cutoff) | (rng.random(u.size) < keep)]]
    return out[:n]


class TestDiscontinuity:
    def test_size(self):
        rng = np.random.default_rng(18)
        reps = 10_000
        rate = np.mean([discontinuity_test(rng.random(5000)).reject for _ in range(reps)])
        assert abs(rate - 0.05) <= 0.015

    def test_thinned_jump_power(self):
        rng = np.random.default_rng(19)
        reps = 200
        rate = np.mean([discontinuity_test(thinned_uniform(5000, rng)).reject for _ in range(reps)])
        assert rate >= 0.9

    def test_symmetric_mean_zero(self):
        rng = np.random.default_rng(20)
        reps = 1000
        z = []
        for _ in range(reps):
            x = 0.05 + 0.02 * rng.standard_normal(20_000)
            z.append(discontinuity_test(x[(x > 0) & (x <= 0.1)][:5000]).statistic)
        z = np.asarray(z)
        assert abs(z.mean()) < 3 * z.std(ddof=1) / np.sqrt(reps)

    def test_truncation_flag(self):
        rng = np.random.default_rng(21)
        r = discontinuity_test(rng.random(5000) * 0.15, bandwidth=0.2)
        assert "bandwidth_truncated" in r.flags
        assert r.meta["bandwidth_left"] == pytest.approx(0.05) and r.meta["bandwidth_right"] == pytest.approx(0.1)

    def test_insufficient(self):
        r = discontinuity_test(np.r_[np.full(5, 0.04), np.full(50, 0.07)])
        assert "insufficient_sample" in r.flags and not r.reject

    @pytest.mark.parametrize("kw", [{"cutoff": 0.2}, {"bandwidth": -0.01}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            discontinuity_test(np.random.default_rng(0).random(500), **kw)

    def test_local_quadratic_slope_exact(self):
        x = np.linspace(0.0, 0.04, 41)
        a = 0.3 + 2.0 * (x - 0.05) - 7.0 * (x - 0.05) ** 2
        from phackpower.battery.discontinuity import side_density_weights

        assert side_density_weights(x, 0.05, 0.05) @ a == pytest.approx(2.0, abs=1e-9)

    def test_jump_contrast_hand(self):
        p = np.r_[np.full(10, 0.049), np.full(6, 0.044), np.full(4, 0.051), np.full(2, 0.056)]
        c, z = jump_contrast(p)
        assert c == pytest.approx((15 - 3) - (6 - 1))
        assert z == pytest.approx(7 / np.sqrt(2.25 * 14 + 0.25 * 8))


class TestRunBattery:
    def test_order_and_names(self):
        rng = np.random.default_rng(22)
        order = ("discontinuity", "binomial", "CS1")
        out = run_battery(rng.random(3000), order)
        assert tuple(r.name for r in out) == order

    def test_all_tests(self):
        out = run_battery(np.random.default_rng(23).random(3000))
        assert tuple(r.name for r in out) == TEST_NAMES

    def test_matches_direct_calls(self):
        p = np.random.default_rng(24).random(3000)
        s = BatterySettings(cs_scope="window", cs_variance="plugin")
        (r,) = run_battery(p, ("CS2B",), s)
        direct = cox_shi_test(p, "CS2B", variance="plugin", scope="window")
        assert r.statistic == direct.statistic

    def test_unknown(self):
        with pytest.raises(ValueError):
            run_battery([0.1], ("ttest",))

    @pytest.mark.parametrize("kw", [{"level": 0.0}, {"sided": "left"}, {"cs_variance": "x"}, {"cs_scope": "x"}])
    def test_settings_invalid(self, kw):
        with pytest.raises(ValueError):
            BatterySettings(**kw)

    def test_as_row(self):
        row = binomial_test([0.5]).as_row()
        assert row == {"test": "binomial", "statistic": 0.0, "pvalue": 1.0, "critical_value": "", "reject": 0,
                       "flags": "insufficient_sample"}
