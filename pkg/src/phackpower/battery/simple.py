"""Binomial and Fisher tests."""

from __future__ import annotations

import numpy as np
from scipy import stats

from .common import TestResult, window_values

__all__ = ["binomial_test", "fisher_test"]


def binomial_test(
    pvalues,
    bin_lo: tuple[float, float] = (0.04, 0.045),
    bin_hi: tuple[float, float] = (0.045, 0.05),
    level: float = 0.05,
) -> TestResult:
    """Exact test of whether the bin nearer the cutoff holds more than half of
    the p-values that land in either bin.

    ``bin_lo`` is half-open ``[a, b)`` and ``bin_hi`` is closed ``[b, c]``.
    """
    (a, b), (c, d) = bin_lo, bin_hi
    if not (a < b <= c < d):
        raise ValueError("bins must be ordered and disjoint")
    p = np.asarray(pvalues, dtype=float)
    far = int(np.sum((p >= a) & (p < b)))
    k = int(np.sum((p >= c) & (p <= d)))
    m = far + k
    if m == 0:
        return TestResult("binomial", 0.0, False, 1.0, flags=("insufficient_sample",), meta={"m": 0, "k": 0})
    pval = float(stats.binom.sf(k - 1, m, 0.5))
    return TestResult("binomial", float(k), pval <= level, pval, meta={"m": m, "k": k})


def fisher_test(pvalues, level: float = 0.05, window: tuple[float, float] | None = None) -> TestResult:
    """Fisher combination ``-2 sum log p`` against chi-squared with ``2n`` dof.

    With ``window = (lower, upper)`` only p-values in ``(lower, upper]`` are
    used, rescaled to ``(0, 1]``.
    """
    if window is not None:
        lower, upper = window
        p = (window_values(pvalues, lower, upper) - lower) / (upper - lower)
    else:
        p = np.asarray(pvalues, dtype=float)
        if np.any((p < 0) | (p > 1)):
            raise ValueError("p-values must lie in [0, 1]")
    n = p.size
    if n == 0:
        return TestResult("fisher", 0.0, False, 1.0, flags=("insufficient_sample",), meta={"n": 0})
    if np.any(p == 0):
        return TestResult("fisher", float("inf"), True, 0.0, flags=("infinite_statistic",), meta={"n": n})
    stat = float(-2.0 * np.sum(np.log(p)))
    pval = float(stats.chi2.sf(stat, 2 * n))
    return TestResult("fisher", stat, pval <= level, pval, meta={"n": n})
