"""Density discontinuity test at a significance cutoff, and a histogram jump
contrast for large samples."""

from __future__ import annotations

import numpy as np
from scipy import stats

from .common import TestResult, window_values

__all__ = ["discontinuity_test", "side_density_weights", "jump_contrast"]

MIN_PER_SIDE = 20
GRID_POINTS = 40
METHOD_NOTE = "local quadratic fit of the empirical CDF, triangular kernel, rule-of-thumb bandwidth"


def side_density_weights(x: np.ndarray, cutoff: float, bandwidth: float) -> np.ndarray:
    """Linear weights ``a`` such that ``a @ F(x)`` is the slope at ``cutoff``
    of a triangular-kernel weighted quadratic fit of ``F`` on ``x - cutoff``."""
    d = x - cutoff
    w = np.maximum(1.0 - np.abs(d) / bandwidth, 0.0)
    X = np.column_stack([np.ones_like(d), d, d * d])
    XtW = X.T * w
    return np.linalg.solve(XtW @ X, XtW)[1]


def _side_count(p: np.ndarray, cutoff: float, bw: float, side: str) -> int:
    if side == "left":
        return int(np.sum((p >= cutoff - bw) & (p <= cutoff)))
    return int(np.sum((p > cutoff) & (p <= cutoff + bw)))


def _nearest_reach(p: np.ndarray, cutoff: float, k: int, side: str) -> float:
    """Distance from ``cutoff`` to the ``k``-th nearest point on one side."""
    d = cutoff - p[p <= cutoff] if side == "left" else p[p > cutoff] - cutoff
    if d.size < k:
        return np.inf
    return float(np.partition(d, k - 1)[k - 1])


def discontinuity_test(
    pvalues,
    cutoff: float = 0.05,
    level: float = 0.05,
    bandwidth: float | tuple[float, float] | None = None,
    window: tuple[float, float] = (0.0, 0.15),
    bandwidth_constant: float = 2.0,
) -> TestResult:
    """Test for a jump in the p-value density at ``cutoff``.

    The empirical CDF of the window sample is evaluated on a fixed grid on
    each side of the cutoff and a local quadratic in ``p - cutoff`` is fitted
    by weighted least squares; its slope estimates the one-sided density.
    The standard error of the difference follows from the exact covariance
    of the empirical CDF at fixed points, ``(min(F_i, F_k) - F_i F_k) / n``,
    evaluated at the estimated CDF.

    The default bandwidth is ``bandwidth_constant * sd * n^{-1/5}`` from the
    window sample. A side holding fewer than ``MIN_PER_SIDE`` points within
    it is widened to reach that many, and each side is truncated at its
    window edge. ``bandwidth`` may be one value or a ``(left, right)`` pair;
    explicit values are only truncated.
    """
    lower, upper = window
    if not (lower < cutoff < upper):
        raise ValueError("cutoff must lie inside the window")
    p = np.sort(window_values(pvalues, lower, upper))
    n = p.size
    flags: list[str] = []
    meta: dict = {"n": n, "method": METHOD_NOTE}
    room = {"left": cutoff - lower, "right": upper - cutoff}
    if bandwidth is None:
        if n < 2:
            return TestResult("discontinuity", 0.0, False, 1.0, flags=("insufficient_sample",), meta=meta)
        base = bandwidth_constant * float(np.std(p, ddof=1)) * n ** -0.2
        bw = {}
        for side in ("left", "right"):
            bw[side] = base
            if _side_count(p, cutoff, base, side) < MIN_PER_SIDE:
                bw[side] = max(base, _nearest_reach(p, cutoff, MIN_PER_SIDE, side))
                meta[f"widened_{side}"] = True
    else:
        pair = (bandwidth, bandwidth) if np.isscalar(bandwidth) else tuple(bandwidth)
        if not all(b > 0 for b in pair):
            raise ValueError("bandwidth must be positive")
        bw = dict(zip(("left", "right"), map(float, pair)))
    for side in ("left", "right"):
        if bw[side] > room[side]:
            bw[side] = room[side]
            if "bandwidth_truncated" not in flags:
                flags.append("bandwidth_truncated")
    counts = {side: _side_count(p, cutoff, bw[side], side) for side in ("left", "right")}
    meta.update(bandwidth_left=bw["left"], bandwidth_right=bw["right"], n_left=counts["left"], n_right=counts["right"])
    if min(counts.values()) < MIN_PER_SIDE:
        flags.append("insufficient_sample")
        return TestResult("discontinuity", 0.0, False, 1.0, flags=tuple(flags), meta=meta)

    steps = np.linspace(0.0, 1.0, GRID_POINTS + 1)
    grid_left = cutoff - bw["left"] * steps[::-1]
    grid_right = cutoff + bw["right"] * steps
    grid = np.concatenate([grid_left, grid_right[1:]])
    F = np.searchsorted(p, grid, side="right") / n
    left = side_density_weights(grid_left, cutoff, bw["left"])
    right = side_density_weights(grid_right, cutoff, bw["right"])
    a = np.zeros(grid.size)
    a[: GRID_POINTS + 1] -= left
    a[GRID_POINTS:] += right
    cov = (np.minimum.outer(F, F) - np.outer(F, F)) / n
    var = float(a @ cov @ a)
    dens_left, dens_right = float(left @ F[: GRID_POINTS + 1]), float(right @ F[GRID_POINTS:])
    meta.update(density_left=dens_left, density_right=dens_right)
    if not var > 0:
        return TestResult("discontinuity", 0.0, False, 1.0, flags=tuple(flags), meta=meta)
    z = (dens_right - dens_left) / np.sqrt(var)
    pval = float(2.0 * stats.norm.sf(abs(z)))
    crit = float(stats.norm.isf(level / 2.0))
    return TestResult("discontinuity", float(z), bool(abs(z) > crit), pval, crit, tuple(flags), meta)


def jump_contrast(pvalues, cutoff: float = 0.05, width: float = 0.005) -> tuple[float, float]:
    """Standardized histogram jump at ``cutoff``.

    Each side's density at the cutoff is extrapolated linearly from the two
    nearest bins of the given width, so smooth curvature cancels between
    sides. Returns ``(contrast, z)`` where ``contrast`` is left minus right
    extrapolated count per bin and ``z`` uses Poisson variances.
    """
    p = np.asarray(pvalues, dtype=float)

    def count(a, b):
        return float(np.sum((p > a) & (p <= b)))

    l1 = count(cutoff - width, cutoff)
    l2 = count(cutoff - 2 * width, cutoff - width)
    r1 = count(cutoff, cutoff + width)
    r2 = count(cutoff + width, cutoff + 2 * width)
    contrast = (1.5 * l1 - 0.5 * l2) - (1.5 * r1 - 0.5 * r2)
    var = 2.25 * (l1 + r1) + 0.25 * (l2 + r2)
    return contrast, contrast / np.sqrt(var) if var > 0 else 0.0
