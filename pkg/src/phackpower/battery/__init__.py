"""Tests of the null hypothesis of no specification search."""

from .common import FLAGS, HistogramSpec, TestResult
from .constraints import ConstraintSystem, build_constraints
from .coxshi import cox_shi_test
from .discontinuity import discontinuity_test, jump_contrast
from .lcm import lcm_critical_values, lcm_statistic, lcm_test
from .run import TEST_NAMES, BatterySettings, run_battery
from .simple import binomial_test, fisher_test

__all__ = [
    "FLAGS",
    "HistogramSpec",
    "TestResult",
    "ConstraintSystem",
    "build_constraints",
    "cox_shi_test",
    "discontinuity_test",
    "jump_contrast",
    "lcm_critical_values",
    "lcm_statistic",
    "lcm_test",
    "TEST_NAMES",
    "BatterySettings",
    "run_battery",
    "binomial_test",
    "fisher_test",
]
