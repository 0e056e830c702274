"""Run several tests on one sample."""

from __future__ import annotations

from dataclasses import dataclass

from .common import HistogramSpec, TestResult
from .coxshi import cox_shi_test
from .discontinuity import discontinuity_test
from .lcm import lcm_test
from .simple import binomial_test, fisher_test

__all__ = ["TEST_NAMES", "BatterySettings", "run_battery"]

TEST_NAMES = ("binomial", "fisher", "lcm", "CS1", "CSUB", "CS2B", "discontinuity")


@dataclass(frozen=True)
class BatterySettings:
    """Shared configuration of the test battery.

    Attributes
    ----------
    spec : HistogramSpec
        Analysis window and bins for the histogram tests; LCM, Fisher and
        discontinuity use the same window.
    level : float
    sided : {"one", "two"}
        Which null bound family the CSUB and CS2B rows use.
    cutoff : float
        Significance cutoff for the discontinuity test.
    binomial_bins : tuple of two (lower, upper) pairs
    lcm_reps, lcm_seed : int
        Size and seed of the simulated LCM null distribution.
    cs_variance : {"restricted", "plugin"}
    cs_scope : {"window", "total"}
        Proportion scope of the Cox-Shi tests, see :func:`cox_shi_test`.
    """

    spec: HistogramSpec = HistogramSpec()
    level: float = 0.05
    sided: str = "two"
    cutoff: float = 0.05
    binomial_bins: tuple[tuple[float, float], tuple[float, float]] = ((0.04, 0.045), (0.045, 0.05))
    lcm_reps: int = 10_000
    lcm_seed: int = 20240101
    cs_variance: str = "restricted"
    cs_scope: str = "total"

    def __post_init__(self):
        if not (0.0 < self.level < 1.0):
            raise ValueError("level must lie in (0, 1)")
        if self.sided not in ("one", "two"):
            raise ValueError("sided must be 'one' or 'two'")
        if self.cs_variance not in ("restricted", "plugin"):
            raise ValueError("cs_variance must be 'restricted' or 'plugin'")
        if self.cs_scope not in ("window", "total"):
            raise ValueError("cs_scope must be 'window' or 'total'")


def run_battery(pvalues, tests=TEST_NAMES, settings: BatterySettings | None = None) -> list[TestResult]:
    """Apply each named test in ``tests`` to ``pvalues`` in the given order."""
    s = settings or BatterySettings()
    window = (s.spec.lower, s.spec.upper)
    out = []
    for name in tests:
        if name == "binomial":
            out.append(binomial_test(pvalues, *s.binomial_bins, level=s.level))
        elif name == "fisher":
            out.append(fisher_test(pvalues, s.level, window))
        elif name == "lcm":
            out.append(lcm_test(pvalues, window, s.level, s.lcm_reps, s.lcm_seed))
        elif name in ("CS1", "CSUB", "CS2B"):
            out.append(cox_shi_test(pvalues, name, s.spec, s.level, s.sided, variance=s.cs_variance, scope=s.cs_scope))
        elif name == "discontinuity":
            out.append(discontinuity_test(pvalues, s.cutoff, s.level, window=window))
        else:
            raise ValueError(f"unknown test {name!r}; choose from {TEST_NAMES}")
    return out
