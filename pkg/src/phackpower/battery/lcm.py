"""Least concave majorant test of a non-increasing density."""

from __future__ import annotations

import threading

import numba
import numpy as np

from .common import TestResult, window_values

__all__ = ["lcm_statistic", "lcm_critical_values", "lcm_test"]


@numba.njit(cache=True)
def _sup_gap(u: np.ndarray) -> float:
    """Largest gap between the concave majorant and the left limits of the
    empirical CDF of sorted values ``u`` in ``[0, 1]``."""
    n = u.size
    # distinct values with CDF right and left limits
    xs = np.empty(n + 2)
    right = np.empty(n + 2)
    left = np.empty(n + 2)
    xs[0] = 0.0
    right[0] = 0.0
    left[0] = 0.0
    m = 1
    i = 0
    while i < n:
        j = i
        while j + 1 < n and u[j + 1] == u[i]:
            j += 1
        if u[i] > 0.0:
            xs[m] = u[i]
            left[m] = i / n
            right[m] = (j + 1) / n
            m += 1
        i = j + 1
    if xs[m - 1] < 1.0:
        xs[m] = 1.0
        right[m] = 1.0
        left[m] = 1.0
        m += 1
    # upper hull, monotone chain
    hx = np.empty(m)
    hy = np.empty(m)
    k = 0
    for t in range(m):
        while k >= 2:
            cross = (hx[k - 1] - hx[k - 2]) * (right[t] - hy[k - 2]) - (hy[k - 1] - hy[k - 2]) * (xs[t] - hx[k - 2])
            if cross >= 0.0:
                k -= 1
            else:
                break
        hx[k] = xs[t]
        hy[k] = right[t]
        k += 1
    best = 0.0
    seg = 0
    for t in range(1, m):
        x = xs[t]
        while seg + 1 < k - 1 and hx[seg + 1] < x:
            seg += 1
        x0, x1 = hx[seg], hx[seg + 1]
        if x1 > x0:
            val = hy[seg] + (hy[seg + 1] - hy[seg]) * (x - x0) / (x1 - x0)
        else:
            val = hy[seg + 1]
        gap = val - left[t]
        if gap > best:
            best = gap
    return best


@numba.njit(cache=True)
def _sup_gap_rows(U: np.ndarray) -> np.ndarray:
    out = np.empty(U.shape[0])
    for r in range(U.shape[0]):
        out[r] = _sup_gap(U[r])
    return out


def lcm_statistic(values, lower: float = 0.0, upper: float = 1.0) -> tuple[float, int]:
    """``sqrt(n)`` times the sup distance between the empirical CDF of the
    window values (rescaled to ``[0, 1]``) and its least concave majorant.

    Returns ``(statistic, n)``.
    """
    u = np.sort((window_values(values, lower, upper) - lower) / (upper - lower))
    n = u.size
    if n == 0:
        return 0.0, 0
    return float(np.sqrt(n) * _sup_gap(u)), n


_CACHE: dict[tuple[int, int, int], np.ndarray] = {}
_LOCK = threading.Lock()


def lcm_critical_values(n: int, reps: int = 10_000, seed: int = 20240101) -> np.ndarray:
    """Sorted simulated statistics under the uniform distribution with sample
    size ``n``; cached per ``(n, reps, seed)``."""
    key = (n, reps, seed)
    with _LOCK:
        hit = _CACHE.get(key)
    if hit is not None:
        return hit
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n,)))
    out = np.empty(reps)
    chunk = max(1, min(reps, 2_000_000 // max(n, 1)))
    done = 0
    while done < reps:
        m = min(chunk, reps - done)
        # uniform order statistics from normalized exponential partial sums
        S = np.cumsum(rng.standard_exponential((m, n + 1)), axis=1)
        U = S[:, :n] / S[:, n:]
        out[done : done + m] = np.sqrt(n) * _sup_gap_rows(U)
        done += m
    out.sort()
    out.setflags(write=False)
    with _LOCK:
        _CACHE[key] = out
    return out


def lcm_test(
    pvalues,
    window: tuple[float, float] = (0.0, 0.15),
    level: float = 0.05,
    mc_crit_reps: int = 10_000,
    seed: int = 20240101,
) -> TestResult:
    """Reject non-increasingness when the LCM statistic exceeds the simulated
    ``1 - level`` quantile under the uniform distribution."""
    stat, n = lcm_statistic(pvalues, *window)
    if n < 2:
        return TestResult("lcm", stat, False, 1.0, flags=("insufficient_sample",), meta={"n": n})
    sims = lcm_critical_values(n, mc_crit_reps, seed)
    crit = float(np.quantile(sims, 1.0 - level))
    pval = float((np.sum(sims >= stat) + 1) / (sims.size + 1))
    return TestResult("lcm", stat, stat > crit, pval, crit, meta={"n": n})
