"""Analytic p-curves with and without specification search.

Each scenario gives the density of reported one-sided p-values for a single
effect ``h`` as ``exp(h z0(p) - h^2/2) * factor(p)``; the mixture over the
effect distribution is taken with :func:`phackpower.numkit.mixture_integral`.

Scenarios
---------
covariate
    Two regressions whose t-statistics have correlation ``rho``.
iv
    Two instruments, reporting from the just-identified fits or the
    over-identified fit.
dataset
    ``K`` independent datasets.
variance
    A second standard error estimate ``sqrt(1 + 2 kappa r)`` times the first,
    with ``r`` the estimated first-order autocovariance of the errors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .numkit import (
    EffectDistribution,
    QuadratureSpec,
    integrate,
    mixture_integral,
    norm_cdf,
    norm_pdf,
    norm_sf,
    upper_quantile,
)

__all__ = [
    "SCENARIOS",
    "STRATEGIES",
    "PCurveModel",
    "RhoHatLaw",
    "build_rhohat_law",
    "z0",
    "null_pcurve",
    "g_cov",
    "g_iv",
    "g_dataset",
    "g_variance",
    "density",
    "single_effect_density",
    "null_upper_bound",
    "bin_proportions",
    "export_curves_csv",
]

SCENARIOS = ("covariate", "iv", "dataset", "variance")
STRATEGIES = ("nohack", "threshold", "minimum")
_SQRT2 = np.sqrt(2.0)


def z0(p):
    """Upper-tail critical value ``Phi^{-1}(1 - p)``."""
    return upper_quantile(p)


def _check_p(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise ValueError("p-values must lie in (0, 1)")
    return p


def _tilt(p, h):
    """Likelihood ratio ``phi(z0(p) - h) / phi(z0(p))`` on a (p, h) grid."""
    return np.exp(h * z0(p) - 0.5 * h * h)


# ---------------------------------------------------------------------------
# law of the autocovariance estimate


@dataclass(frozen=True)
class RhoHatLaw:
    """Simulated law of the first-order residual autocovariance.

    The law is stored as a histogram on ``[-1, 1]``; ``cdf_vals`` is the CDF at
    the cell edges ``grid`` and is linear within cells. ``pdf_vals`` gives the
    density at the edges by averaging neighbouring cells.
    """

    grid: np.ndarray = field(repr=False)
    cdf_vals: np.ndarray = field(repr=False)
    pdf_vals: np.ndarray = field(repr=False)
    N: int
    draws: int
    mean: float
    var: float

    def cdf(self, r):
        """Piecewise linear CDF."""
        return np.interp(r, self.grid, self.cdf_vals, left=0.0, right=1.0)

    def pdf(self, r):
        return np.interp(r, self.grid, self.pdf_vals, left=0.0, right=0.0)

    def expect(self, f: Callable[[np.ndarray], np.ndarray], lower: float, upper: float) -> np.ndarray:
        """Integrate ``f(r)`` against the law over ``[lower, upper]``.

        Uses the exact mass of each (clipped) histogram cell with ``f``
        evaluated at the clipped cell's midpoint. ``f`` receives a 1-D array
        and may return trailing axes.
        """
        lower = max(lower, self.grid[0])
        upper = min(upper, self.grid[-1])
        if upper <= lower:
            return np.asarray(f(np.array([0.0])), dtype=float)[0] * 0.0
        lo = np.clip(self.grid[:-1], lower, upper)
        hi = np.clip(self.grid[1:], lower, upper)
        keep = hi > lo
        lo, hi = lo[keep], hi[keep]
        mass = self.cdf(hi) - self.cdf(lo)
        vals = np.asarray(f(0.5 * (lo + hi)), dtype=float)
        return np.tensordot(mass, vals, axes=(0, 0))


def build_rhohat_law(
    N: int, draws: int = 200_000, seed: int = 0, cells: int = 2048, chunk: int = 20_000
) -> RhoHatLaw:
    """Simulate the residual autocovariance ``(N-1)^{-1} sum u_t u_{t-1}``.

    ``u`` are demeaned i.i.d. standard normal series of length ``N``.
    """
    if N < 10:
        raise ValueError("N must be at least 10")
    if draws < 1000:
        raise ValueError("draws must be at least 1000")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    edges = np.linspace(-1.0, 1.0, cells + 1)
    counts = np.zeros(cells)
    s1 = s2 = 0.0
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        u = rng.standard_normal((m, N))
        u -= u.mean(axis=1, keepdims=True)
        r = np.einsum("ij,ij->i", u[:, 1:], u[:, :-1]) / (N - 1)
        s1 += r.sum()
        s2 += (r * r).sum()
        idx = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, cells - 1)
        counts += np.bincount(idx, minlength=cells)
        done += m
    cdf_vals = np.concatenate([[0.0], np.cumsum(counts)]) / draws
    cell_pdf = counts / draws / np.diff(edges)
    pdf_vals = np.concatenate([[cell_pdf[0] / 2], 0.5 * (cell_pdf[1:] + cell_pdf[:-1]), [cell_pdf[-1] / 2]])
    mean = s1 / draws
    return RhoHatLaw(edges, cdf_vals, pdf_vals, N, draws, float(mean), float(s2 / draws - mean * mean))


# ---------------------------------------------------------------------------
# model container


@dataclass(frozen=True)
class PCurveModel:
    """Analytic p-curve model.

    Attributes
    ----------
    scenario : {"covariate", "iv", "dataset", "variance"}
    strategy : {"nohack", "threshold", "minimum"}
    alpha : float
        Significance threshold targeted by the threshold strategy.
    rho : float
        Correlation between the two t-statistics (covariate scenario).
    K : int
        Number of independent datasets (dataset scenario).
    kappa : float
        Weight on the autocovariance in the second variance estimate.
    N : int
        Sample length used for the autocovariance law.
    effect : EffectDistribution
    """

    scenario: str
    strategy: str = "nohack"
    alpha: float = 0.05
    rho: float = 0.5
    K: int = 2
    kappa: float = 0.5
    N: int = 200
    effect: EffectDistribution = field(default_factory=lambda: EffectDistribution.point_mass(0.0))

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not (0.0 < self.alpha <= 0.5):
            raise ValueError("alpha must lie in (0, 1/2]")
        if self.scenario == "covariate" and not (0.0 < self.rho < 1.0):
            raise ValueError("rho must lie in (0, 1)")
        if self.scenario == "dataset" and (int(self.K) != self.K or self.K < 1):
            raise ValueError("K must be a positive integer")
        if self.scenario == "dataset" and self.strategy == "threshold" and self.K != 2:
            raise ValueError("threshold dataset curve is available for K = 2 only")
        if self.scenario == "variance" and not self.kappa > 0:
            raise ValueError("kappa must be positive")

    def with_effect(self, effect: EffectDistribution) -> "PCurveModel":
        return replace(self, effect=effect)


# ---------------------------------------------------------------------------
# single-effect factors; p has shape (m,), h has shape (k,), output (m, k)


def _cov_factor(p, h, model: PCurveModel, rho: float | None = None):
    rho = model.rho if rho is None else rho
    zh = z0(p)[:, None] - h[None, :]
    tail = norm_cdf(zh * np.sqrt((1.0 - rho) / (1.0 + rho)))
    if model.strategy == "minimum":
        return 2.0 * tail
    za = z0(model.alpha) - h[None, :]
    below = 1.0 + norm_cdf((za - rho * zh) / np.sqrt(1.0 - rho * rho))
    return np.where((p <= model.alpha)[:, None], below, 2.0 * tail)


def _iv_factor(p, h, model: PCurveModel):
    z = z0(p)[:, None]
    hh = h[None, :]
    zh = z - hh
    # phi(z - sqrt2 h) / phi(z - h), which is bounded for p <= 1/2
    ratio = np.exp((_SQRT2 - 1.0) * hh * z - 0.5 * hh * hh)
    zeta = 1.0 - 2.0 * norm_cdf((1.0 - _SQRT2) * z)
    middle = ratio * zeta + 2.0 * norm_cdf(_SQRT2 * z - 2.0 * hh - zh)
    upper = 2.0 * norm_cdf(zh)
    out = np.where((p <= 0.5)[:, None], middle, upper)
    if model.strategy == "threshold":
        za = z0(model.alpha)
        low = ratio + 2.0 * norm_cdf(_SQRT2 * za - 2.0 * hh - zh)
        out = np.where((p <= model.alpha)[:, None], low, out)
    return out


def _dataset_factor(p, h, model: PCurveModel):
    if model.strategy == "threshold":
        return _cov_factor(p, h, model, rho=0.0)
    K = int(model.K)
    zh = z0(p)[:, None] - h[None, :]
    return K * norm_cdf(zh) ** (K - 1)


def _variance_density(p, h, model: PCurveModel, law: RhoHatLaw):
    """Full single-effect density (not a factor) for the variance scenario."""
    kappa = model.kappa
    floor = -1.0 / (2.0 * kappa)
    z = z0(p)
    tilt = _tilt(p[:, None], h[None, :])

    def kernel(zz):
        # r -> omega(r) phi(zz omega(r) - h) / phi(zz) for one p value
        def f(r):
            om = np.sqrt(np.maximum(1.0 + 2.0 * kappa * r, 0.0))[:, None]
            return om * np.exp(-0.5 * (zz * om - h[None, :]) ** 2 + 0.5 * zz * zz)

        return f

    H0 = float(law.cdf(0.0))
    Hf = float(law.cdf(floor))
    za = z0(model.alpha)
    out = np.empty((p.size, h.size))
    for i, (pi, zi) in enumerate(zip(p, z)):
        if pi > 0.5:
            out[i] = H0 * tilt[i] + law.expect(kernel(zi), 0.0, np.inf)
        elif model.strategy == "threshold" and pi <= model.alpha:
            limit = ((za / zi) ** 2 - 1.0) / (2.0 * kappa)
            out[i] = tilt[i] + law.expect(kernel(zi), floor, limit)
        else:
            out[i] = (1.0 - H0 + Hf) * tilt[i] + law.expect(kernel(zi), floor, 0.0)
    return out


def single_effect_density(p, h, model: PCurveModel, law: RhoHatLaw | None = None) -> np.ndarray:
    """Density of reported p-values for each effect in ``h``.

    Returns an array of shape ``(len(p), len(h))``.
    """
    p = np.atleast_1d(_check_p(p))
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if model.strategy == "nohack":
        return _tilt(p[:, None], h[None, :])
    if model.scenario == "variance":
        if law is None:
            raise ValueError("variance scenario needs a RhoHatLaw")
        return _variance_density(p, h, model, law)
    factor = {"covariate": _cov_factor, "iv": _iv_factor, "dataset": _dataset_factor}[model.scenario]
    return _tilt(p[:, None], h[None, :]) * factor(p, h, model)


def density(p, model: PCurveModel, law: RhoHatLaw | None = None, quad: QuadratureSpec | None = None):
    """Mixture density of reported p-values under ``model``."""
    p_arr = np.atleast_1d(_check_p(p))
    out = mixture_integral(lambda h: single_effect_density(p_arr, h, model, law).T, model.effect, quad)
    return out if np.ndim(p) else float(out[0])


def null_pcurve(p, h=None, effect: EffectDistribution | None = None):
    """p-curve without specification search.

    Pass a single effect ``h`` or an :class:`EffectDistribution`.
    """
    if (h is None) == (effect is None):
        raise ValueError("pass exactly one of h or effect")
    if effect is None:
        effect = EffectDistribution.point_mass(h)
    return density(p, PCurveModel("covariate", "nohack", effect=effect))


def g_cov(p, model: PCurveModel):
    """Covariate selection p-curve."""
    if model.scenario != "covariate":
        raise ValueError("model is not a covariate-selection model")
    return density(p, model)


def g_iv(p, model: PCurveModel):
    """Instrument selection p-curve."""
    if model.scenario != "iv":
        raise ValueError("model is not an instrument-selection model")
    return density(p, model)


def g_dataset(p, model: PCurveModel):
    """Dataset selection p-curve."""
    if model.scenario != "dataset":
        raise ValueError("model is not a dataset-selection model")
    return density(p, model)


def g_variance(p, model: PCurveModel, law: RhoHatLaw):
    """Variance-estimator selection p-curve."""
    if model.scenario != "variance":
        raise ValueError("model is not a variance-selection model")
    return density(p, model, law)


def _breakpoints(model: PCurveModel) -> tuple[float, ...]:
    pts = {0.5}
    if model.strategy == "threshold":
        pts.add(model.alpha)
    return tuple(sorted(pts))


def bin_proportions(
    g: Callable | PCurveModel,
    partition: Sequence[float],
    law: RhoHatLaw | None = None,
    quad: QuadratureSpec | None = None,
) -> np.ndarray:
    """Probability mass of each bin ``(x_{j-1}, x_j]`` of ``partition``.

    ``g`` is either a vectorized density or a :class:`PCurveModel`.
    """
    x = np.asarray(partition, dtype=float)
    if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0) or x[0] < 0 or x[-1] > 1:
        raise ValueError("partition must be strictly increasing inside [0, 1]")
    splits: tuple[float, ...] = ()
    if isinstance(g, PCurveModel):
        model = g
        splits = _breakpoints(model)
        dens = lambda q: density(q, model, law)  # noqa: E731
    else:
        dens = g
    spec = quad or QuadratureSpec(abs_tol=1e-9)

    # integrate over z = z0(p), where mass piling up near p = 0 stays smooth
    def f(z):
        q = np.clip(norm_sf(z), 1e-300, 1 - 1e-16)
        with np.errstate(over="ignore", invalid="ignore"):
            val = np.asarray(dens(q), dtype=float) * norm_pdf(z)
        return np.where(norm_pdf(z) > 0, val, 0.0)

    out = np.empty(x.size - 1)
    for j in range(x.size - 1):
        lo, hi = x[j], x[j + 1]
        z_lo = np.inf if lo <= 0.0 else float(z0(lo))
        z_hi = -np.inf if hi >= 1.0 else float(z0(hi))
        inner = tuple(sorted(float(z0(s)) for s in splits if lo < s < hi))
        out[j] = integrate(f, z_hi, z_lo, replace(spec, domain_split=inner))
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------------------
# upper bounds on null p-curves


def _h_grid() -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(1e-3, 40.0, 240)])


def _bound_terms(p, h, order: int, sided: str):
    """Single-effect density or signed derivative values; ``p`` and ``h`` broadcast."""
    if sided == "one":
        z = z0(p)
        g = np.exp(h * z - 0.5 * h * h)
        if order == 0:
            return g
        phi = norm_pdf(z)
        if order == 1:
            return h * g / phi
        return h * g * (h + z) / phi**2
    z = z0(p / 2.0)
    e = np.exp(-0.5 * h * h)
    if order == 0:
        return e * np.cosh(h * z)
    phi = norm_pdf(z)
    if order == 1:
        return h * e * np.sinh(h * z) / (2.0 * phi)
    return h * e * (h * np.cosh(h * z) + z * np.sinh(h * z)) / (4.0 * phi**2)


def _window_mass(h, lower: float, upper: float, sided: str):
    """Probability that a single-effect p-value falls in ``(lower, upper]``."""

    def cdf(c):
        if c <= 0.0:
            return np.zeros_like(h)
        if c >= 1.0:
            return np.ones_like(h)
        if sided == "one":
            return norm_cdf(h - z0(c))
        zc = z0(c / 2.0)
        return norm_cdf(h - zc) + norm_cdf(-zc - h)

    return cdf(upper) - cdf(lower)


def null_upper_bound(
    p, order: int = 0, sided: str = "one", interval_cap: float = 1.0, interval_floor: float = 0.0
):
    """Upper bound on null p-curves conditional on ``(interval_floor, interval_cap]``.

    Order 0 bounds the density, order 1 minus its first derivative and order 2
    its second derivative, each as the supremum over effects ``h`` in
    ``[0, 40]`` of the single-effect value divided by the single-effect mass
    of the window. A mixture over effects cannot exceed this ratio.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    if sided not in ("one", "two"):
        raise ValueError("sided must be 'one' or 'two'")
    if not (0.0 <= interval_floor < interval_cap <= 1.0):
        raise ValueError("window must satisfy 0 <= floor < cap <= 1")
    p_arr = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any((p_arr <= interval_floor) | (p_arr > interval_cap)) or np.any(p_arr >= 1.0):
        raise ValueError("p must lie inside the window and below 1")

    def ratio(pp, hh):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            val = _bound_terms(pp, hh, order, sided) / _window_mass(hh, interval_floor, interval_cap, sided)
        return np.where(np.isfinite(val), val, -np.inf)

    grid = _h_grid()
    vals = ratio(p_arr[:, None], grid[None, :])
    k = vals.argmax(axis=1)
    best = vals[np.arange(p_arr.size), k]
    # golden-section refinement inside the bracketing grid cells
    a = grid[np.maximum(k - 1, 0)]
    b = grid[np.minimum(k + 1, grid.size - 1)]
    inv = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    for _ in range(60):
        left = ratio(p_arr, c) > ratio(p_arr, d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c = b - inv * (b - a)
        d = a + inv * (b - a)
    fc, fd = ratio(p_arr, c), ratio(p_arr, d)
    best = np.maximum(best, np.maximum(fc, fd))
    return best if np.ndim(p) else float(best[0])


# ---------------------------------------------------------------------------
# export


def export_curves_csv(
    path,
    models: Sequence[PCurveModel],
    step: float = 0.001,
    law: RhoHatLaw | None = None,
) -> int:
    """Write densities on the grid ``step, 2 step, ..., 1 - step`` to CSV.

    Columns are ``p, density, strategy, scenario, h`` where ``h`` is the point
    mass location or ``"mixture"``. Returns the number of data rows.
    """
    grid = np.arange(step, 1.0 - step / 2, step)
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "density", "strategy", "scenario", "h"])
        for m in models:
            label = repr(m.effect.h0) if m.effect.kind == "point_mass" else "mixture"
            dens = density(grid, m, law)
            for p, d in zip(grid, dens):
                w.writerow([f"{p:.10g}", f"{d:.12g}", m.strategy, m.scenario, label])
                rows += 1
    return rows
