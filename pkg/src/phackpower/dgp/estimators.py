"""Single-sample estimators: OLS, 2SLS, Newey-West and cluster-robust errors.

These are the reference implementations. The pool simulator uses batched
Gram-matrix versions that are tested against these for equality.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Optional

import numpy as np
from scipy import special

__all__ = [
    "FitResult",
    "SpecificationSkipped",
    "pvalue_from_t",
    "ols_fit",
    "iv_2sls_fit",
    "newey_west_se",
    "white_se",
    "cluster_se",
    "bic_lag_select",
]


class SpecificationSkipped(Exception):
    """A specification cannot be estimated (rank deficiency, bad variance)."""


@dataclass(frozen=True)
class FitResult:
    """Estimate and test for the coefficient of interest.

    Attributes
    ----------
    beta_hat, se, tstat, pvalue : float
    spec_id : hashable
        Descriptor of the specification (for example a tuple of control indices).
    fstat_first_stage : float, optional
        Joint F statistic of the excluded instruments (2SLS only).
    """

    beta_hat: float
    se: float
    tstat: float
    pvalue: float
    spec_id: Hashable = None
    fstat_first_stage: Optional[float] = None


def pvalue_from_t(t, sided: str = "two"):
    """Normal-reference p-value; ``sided`` is ``"one"`` (upper tail) or ``"two"``."""
    t = np.asarray(t, dtype=float)
    if sided == "one":
        out = special.ndtr(-t)
    elif sided == "two":
        out = 2.0 * special.ndtr(-np.abs(t))
    else:
        raise ValueError("sided must be 'one' or 'two'")
    return out if out.ndim else float(out)


def _design(x, controls, intercept: bool) -> np.ndarray:
    n = len(x)
    cols = [np.asarray(x, dtype=float).reshape(n, 1)]
    if controls is not None:
        c = np.asarray(controls, dtype=float)
        if c.size:
            cols.append(c.reshape(n, -1))
    if intercept:
        cols.append(np.ones((n, 1)))
    return np.hstack(cols)


def _check_rank(M: np.ndarray, what: str):
    if np.linalg.matrix_rank(M) < M.shape[1]:
        raise SpecificationSkipped(f"{what} is rank deficient")


def ols_fit(y, x, controls=None, sided: str = "two", intercept: bool = True, spec_id=None) -> FitResult:
    """OLS of ``y`` on ``x``, optional controls and an intercept.

    The standard error is the homoskedastic one with ``n - k`` degrees of
    freedom; the p-value uses the normal reference.
    """
    y = np.asarray(y, dtype=float)
    D = _design(x, controls, intercept)
    n, k = D.shape
    if n <= k:
        raise SpecificationSkipped("fewer observations than regressors")
    _check_rank(D, "design")
    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    resid = y - D @ coef
    s2 = resid @ resid / (n - k)
    cov = s2 * np.linalg.inv(D.T @ D)
    se = float(np.sqrt(cov[0, 0]))
    t = float(coef[0] / se)
    return FitResult(float(coef[0]), se, t, pvalue_from_t(t, sided), spec_id)


def iv_2sls_fit(
    y, x, instruments, sided: str = "two", intercept: bool = True, spec_id=None
) -> FitResult:
    """Just- or over-identified 2SLS of ``y`` on a single endogenous ``x``.

    The variance is ``sigma^2 (R' P_W R)^{-1}`` with ``sigma^2`` the mean
    squared structural residual. ``fstat_first_stage`` is the F statistic for
    the excluded instruments in the first-stage regression.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    n = len(y)
    Zs = np.asarray(instruments, dtype=float).reshape(n, -1)
    q = Zs.shape[1]
    if q < 1:
        raise SpecificationSkipped("no instruments")
    W = np.hstack([Zs, np.ones((n, 1))]) if intercept else Zs
    R = np.column_stack([x, np.ones(n)]) if intercept else x.reshape(n, 1)
    _check_rank(W, "instrument matrix")
    fitted = W @ np.linalg.lstsq(W, R, rcond=None)[0]
    _check_rank(fitted, "projected regressors")
    coef = np.linalg.solve(fitted.T @ R, fitted.T @ y)
    resid = y - R @ coef
    sigma2 = resid @ resid / n
    cov = sigma2 * np.linalg.inv(fitted.T @ fitted)
    se = float(np.sqrt(cov[0, 0]))
    t = float(coef[0] / se)

    first = x - fitted[:, 0]
    rss_u = first @ first
    xc = x - x.mean() if intercept else x
    rss_r = xc @ xc
    dof = n - W.shape[1]
    if rss_u <= 0:
        raise SpecificationSkipped("first stage fits exactly")
    fstat = float((rss_r - rss_u) / q / (rss_u / dof))
    if rss_r - rss_u <= 1e-12 * rss_r:
        raise SpecificationSkipped("no first-stage variation")
    return FitResult(float(coef[0]), se, t, pvalue_from_t(t, sided), spec_id, fstat)


def _scores(resid, x):
    resid = np.asarray(resid, dtype=float)
    x = np.asarray(x, dtype=float)
    xc = x - x.mean()
    return xc * resid, xc @ xc


def newey_west_se(resid, x, lags: int) -> float:
    """Bartlett-kernel HAC standard error of the slope in a regression on
    ``x`` and an intercept.

    ``x`` is demeaned internally, which partials out the intercept exactly.
    """
    s, sxx = _scores(resid, x)
    n = len(s)
    if not (0 <= lags < n):
        raise ValueError("lags must lie in [0, n)")
    v = s @ s
    for l in range(1, lags + 1):
        v += 2.0 * (1.0 - l / (lags + 1.0)) * (s[l:] @ s[:-l])
    if not v > 0:
        raise SpecificationSkipped("non-positive HAC variance")
    return float(np.sqrt(v) / sxx)


def white_se(resid, x) -> float:
    """Heteroskedasticity-robust (HC0) standard error of the slope."""
    return newey_west_se(resid, x, 0)


def cluster_se(resid, x, group_count: int, small_sample: bool = False) -> float:
    """Cluster-robust standard error with contiguous equal-size clusters.

    By default no small-sample correction is applied, so ``group_count = n``
    gives HC0. ``small_sample=True`` scales the variance by ``G / (G - 1)``;
    pair it with a ``t(G - 1)`` reference when ``G`` is small.
    """
    s, sxx = _scores(resid, x)
    n = len(s)
    if group_count < 1 or n % group_count:
        raise ValueError("group_count must divide the sample size")
    sums = s.reshape(group_count, n // group_count).sum(axis=1)
    v = sums @ sums
    if small_sample:
        if group_count < 2:
            raise ValueError("the small-sample correction needs at least two clusters")
        v *= group_count / (group_count - 1.0)
    if not v > 0:
        raise SpecificationSkipped("non-positive cluster variance")
    return float(np.sqrt(v) / sxx)


def bic_lag_select(resid, max_lags: int) -> int:
    """Order in ``0..max_lags`` minimizing the BIC of an AR fit to ``resid``.

    All orders are fitted without intercept on the common sample that drops
    the first ``max_lags`` observations; ties go to the smaller order.
    """
    if max_lags < 0:
        raise ValueError("max_lags must be non-negative")
    e = np.asarray(resid, dtype=float)
    if max_lags == 0:
        return 0
    n = len(e)
    m = n - max_lags
    target = e[max_lags:]
    lagged = np.column_stack([e[max_lags - l : n - l] for l in range(1, max_lags + 1)])
    best, best_bic = 0, m * np.log(target @ target / m)
    for p in range(1, max_lags + 1):
        coef, *_ = np.linalg.lstsq(lagged[:, :p], target, rcond=None)
        r = target - lagged[:, :p] @ coef
        bic = m * np.log(r @ r / m) + p * np.log(m)
        if bic < best_bic:
            best, best_bic = p, bic
    return best
