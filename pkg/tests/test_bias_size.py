import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from phackpower.bias_size import DistortionReport, bias_cov, bias_iv, distortion_report, size_cov, size_iv, size_variance
from phackpower.pcurve import build_rhohat_law

from .oracles import cov_bias_draws, iv_bias_draws, simulate_rule

PHI0 = stats.norm.pdf(0.0)


@pytest.fixture(scope="module")
def law():
    return build_rhohat_law(200)


class TestSizeCov:
    def test_identical_tests(self):
        assert size_cov(0.05, 1.0) == pytest.approx(0.05, abs=1e-14)

    def test_independent_tests(self):
        assert size_cov(0.05, 0.0) == pytest.approx(0.0975, abs=1e-14)

    def test_against_simulation(self, rng):
        p = simulate_rule("covariate", "minimum", 0.0, 1_000_000, rng, rho=0.75)
        expect = size_cov(0.05, 0.75)
        assert abs(np.mean(p <= 0.05) - expect) <= 3 * np.sqrt(expect * (1 - expect) / p.size)

    @given(st.floats(0.001, 0.5), st.floats(0.0, 1.0))
    def test_between_nominal_and_bonferroni(self, alpha, rho):
        s = size_cov(alpha, rho)
        assert alpha - 1e-12 <= s <= 2 * alpha + 1e-12

    @given(st.floats(0.001, 0.5), st.floats(0.0, 0.99), st.floats(0.0, 0.99))
    def test_decreasing_in_correlation(self, alpha, a, b):
        lo, hi = min(a, b), max(a, b)
        assert size_cov(alpha, lo) >= size_cov(alpha, hi) - 1e-12


class TestSizeIV:
    def test_eleven_percent(self):
        assert size_iv(0.05) == pytest.approx(0.11, abs=0.005)

    def test_small_alpha(self):
        assert size_iv(1e-10) < 1e-9

    @pytest.mark.parametrize("alpha", [0.05, 0.10])
    def test_against_simulation(self, alpha):
        p = simulate_rule("iv", "minimum", 0.0, 1_000_000, np.random.default_rng(11))
        expect = size_iv(alpha)
        assert abs(np.mean(p <= alpha) - expect) <= 3 * np.sqrt(expect * (1 - expect) / p.size)

    def test_threshold_same_as_minimum_at_null(self):
        rng = np.random.default_rng(12)
        pt = simulate_rule("iv", "threshold", 0.0, 200_000, rng)
        pm = simulate_rule("iv", "minimum", 0.0, 200_000, np.random.default_rng(12))
        assert np.mean(pt <= 0.05) == np.mean(pm <= 0.05)


class TestSizeVariance:
    def test_modest_distortion(self, law):
        assert 0.05 < size_variance(0.05, law, 0.5) < 0.06

    def test_small_kappa_limit(self, law):
        assert size_variance(0.05, law, 1e-8) == pytest.approx(0.05, abs=1e-7)

    def test_against_simulation(self, law):
        p = simulate_rule("variance", "minimum", 0.0, 1_000_000, np.random.default_rng(13))
        expect = size_variance(0.05, law, 0.5)
        # the law is itself simulated; add its own MC error
        se = np.sqrt(expect * (1 - expect) / p.size + expect * (1 - expect) / law.draws)
        assert abs(np.mean(p <= 0.05) - expect) <= 3 * se

    def test_monotone_in_alpha(self, law):
        vals = [size_variance(a, law, 0.5) for a in np.linspace(0.005, 0.5, 25)]
        assert np.all(np.diff(vals) >= -1e-12)


class TestBiasCov:
    def test_minimum_value(self):
        expect = np.sqrt(2 * 0.25 / 0.75) * PHI0 / np.sqrt(200)
        assert bias_cov(0.0, 0.75, N=200, strategy="minimum") == pytest.approx(expect, abs=1e-12)
        assert bias_cov(0.0, 0.75, N=200, strategy="minimum") == pytest.approx(0.02303, abs=1e-5)

    @pytest.mark.parametrize("strategy", ["threshold", "minimum"])
    def test_against_simulation(self, strategy):
        d = cov_bias_draws(0.5, 0.75, 0.05, 200, strategy, 1_000_000, np.random.default_rng(14))
        assert abs(d.mean() - bias_cov(0.5, 0.75, 0.05, 200, strategy)) <= 3 * d.std() / np.sqrt(d.size)

    def test_vanishes_without_room(self):
        assert bias_cov(0.0, 1 - 1e-12, strategy="minimum") < 1e-6
        assert bias_cov(0.0, 1 - 1e-12, strategy="threshold") < 1e-6

    def test_larger_for_small_effects(self):
        assert bias_cov(3.0, 0.5) < bias_cov(0.0, 0.5)

    @given(st.floats(0.0, 5.0), st.floats(0.01, 0.99))
    def test_threshold_below_minimum(self, h, rho):
        assert bias_cov(h, rho) <= bias_cov(h, rho, strategy="minimum") + 1e-15

    def test_domain(self):
        with pytest.raises(ValueError):
            bias_cov(0.0, 0.0)


class TestBiasIV:
    def test_minimum_at_null(self):
        c = np.sqrt(2 - np.sqrt(2))
        expect = PHI0 * 0.5 / c + np.sqrt(2) * PHI0 * 0.5
        assert bias_iv(0.0, strategy="minimum") == pytest.approx(expect, abs=1e-14)
        assert bias_iv(0.0, strategy="minimum") == pytest.approx(0.5427, abs=1e-4)

    @pytest.mark.parametrize("strategy", ["threshold", "minimum"])
    @pytest.mark.parametrize("h", [0.0, 1.0])
    def test_against_simulation(self, strategy, h):
        d = iv_bias_draws(h, 0.05, strategy, 1_000_000, np.random.default_rng(15))
        assert abs(d.mean() - bias_iv(h, 0.05, 1.0, strategy)) <= 3 * d.std() / np.sqrt(d.size)

    def test_correction_identity(self):
        c = np.sqrt(2 - np.sqrt(2))
        diff = bias_iv(0.0, 0.5, strategy="minimum") - bias_iv(0.0, 0.5, strategy="threshold")
        assert diff == pytest.approx(PHI0 / c * 0.5, abs=1e-14)

    @pytest.mark.parametrize("strategy", ["threshold", "minimum"])
    def test_vanishes_for_large_effects(self, strategy):
        assert bias_iv(6.0, strategy=strategy) < 0.01

    def test_threshold_below_minimum_on_grid(self):
        for h in np.linspace(0, 4, 41):
            assert bias_iv(h) <= bias_iv(h, strategy="minimum") + 1e-15

    def test_scales_with_first_stage(self):
        assert bias_iv(0.5, gamma=2.0) == pytest.approx(bias_iv(0.5) / 2, rel=1e-14)


class TestReport:
    @pytest.mark.parametrize("scenario", ["covariate", "iv", "dataset"])
    def test_rows(self, scenario):
        row = distortion_report(scenario, "threshold").as_row()
        assert row["scenario"] == scenario and row["empirical_size"] >= 0.05

    def test_variance_needs_law(self):
        with pytest.raises(ValueError):
            distortion_report("variance", "minimum")

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            DistortionReport("covariate", "minimum", 0.05, 0.01, 0.0)
