"""Size distortion and bias of reported estimates under specification search.

Size is the probability that the reported test rejects at nominal level
``alpha`` when the true effect is zero. Bias is the mean error of the reported
estimate relative to the truth, scaled as documented per function.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .numkit import QuadratureSpec, bvn_cdf, integrate, norm_cdf, norm_pdf, upper_quantile
from .pcurve import RhoHatLaw

__all__ = [
    "DistortionReport",
    "size_cov",
    "size_iv",
    "size_variance",
    "bias_cov",
    "bias_iv",
    "distortion_report",
]

_SQRT2 = np.sqrt(2.0)
_PHI0 = norm_pdf(0.0)


def _check_alpha(alpha: float, upper: float = 1.0) -> float:
    if not (0.0 < alpha < upper or (upper < 1.0 and alpha == upper)):
        raise ValueError(f"alpha must lie in (0, {upper})")
    return float(alpha)


def size_cov(alpha: float, rho: float) -> float:
    """Rejection probability under the null with two tests of correlation ``rho``.

    Identical for the threshold and minimum strategies. ``rho = 0`` covers two
    independent datasets.
    """
    _check_alpha(alpha)
    if not (0.0 <= rho <= 1.0):
        raise ValueError("rho must lie in [0, 1]")
    z = upper_quantile(alpha)
    return float(1.0 - bvn_cdf(z, z, rho))


def size_iv(alpha: float, quad: QuadratureSpec | None = None) -> float:
    """Null rejection probability when choosing among two single-instrument fits
    and the two-instrument fit (threshold and minimum coincide at ``h = 0``)."""
    _check_alpha(alpha)
    z = upper_quantile(alpha)
    lo = (_SQRT2 - 1.0) * z
    spec = quad or QuadratureSpec(abs_tol=1e-12)
    tail = integrate(lambda x: norm_pdf(x) * norm_cdf(_SQRT2 * z - x), min(lo, z), max(lo, z), spec)
    if lo > z:
        tail = -tail
    return float(1.0 - norm_cdf(z) * norm_cdf(lo) - tail)


def size_variance(alpha: float, law: RhoHatLaw, kappa: float, h: float = 0.0) -> float:
    """Rejection probability when also trying the variance estimate scaled by
    ``1 + 2 kappa r``, with ``r`` distributed as ``law``.

    A negative scaled variance means only the initial test is used.
    """
    _check_alpha(alpha, 0.5)
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    z = upper_quantile(alpha)
    floor = -1.0 / (2.0 * kappa)

    def extra(r):
        om = np.sqrt(np.maximum(1.0 + 2.0 * kappa * r, 0.0))
        return norm_cdf(z - h) - norm_cdf(z * om - h)

    return float(1.0 - norm_cdf(z - h) + law.expect(extra, floor, 0.0))


def bias_cov(h: float, rho: float, alpha: float = 0.05, N: int = 200, strategy: str = "threshold") -> float:
    """Mean error of the reported coefficient when choosing between two regressions.

    The two t-statistics have correlation ``rho``; the estimate is on the
    original (unscaled) coefficient scale for sample size ``N``.
    """
    if not (0.0 < rho < 1.0):
        raise ValueError("rho must lie in (0, 1)")
    if N < 1:
        raise ValueError("N must be positive")
    scale = 1.0 / np.sqrt(N * rho)
    full = np.sqrt(2.0 * (1.0 - rho)) * _PHI0
    if strategy == "minimum":
        return float(full * scale)
    if strategy != "threshold":
        raise ValueError("strategy must be 'threshold' or 'minimum'")
    _check_alpha(alpha)
    zh = upper_quantile(alpha) - h
    a = np.sqrt((1.0 - rho) / (1.0 + rho))
    val = full * norm_cdf(np.sqrt(2.0 / (1.0 + rho)) * zh) + (1.0 - rho) * norm_pdf(zh) * (1.0 - norm_cdf(a * zh))
    return float(val * scale)


def bias_iv(h: float, alpha: float = 0.05, gamma: float = 1.0, strategy: str = "threshold") -> float:
    """Mean of the limiting distribution of ``sqrt(N) (reported - truth)`` when
    choosing instruments; ``gamma`` is the common first-stage coefficient."""
    if gamma == 0:
        raise ValueError("gamma must be non-zero")
    c = np.sqrt(2.0 - _SQRT2)
    lead = norm_pdf(np.sqrt((_SQRT2 - 1.0) / _SQRT2) * h) / c
    minimum = lead * norm_cdf(h / c) + _SQRT2 * _PHI0 * (1.0 - norm_cdf(_SQRT2 * h))
    if strategy == "minimum":
        return float(minimum / abs(gamma))
    if strategy != "threshold":
        raise ValueError("strategy must be 'threshold' or 'minimum'")
    _check_alpha(alpha)
    correction = lead * norm_cdf(h / c - np.sqrt(4.0 - 2.0 * _SQRT2) * upper_quantile(alpha))
    return float((minimum - correction) / abs(gamma))


@dataclass(frozen=True)
class DistortionReport:
    """One row of size and bias output."""

    scenario: str
    strategy: str
    nominal_size: float
    empirical_size: float
    bias: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.nominal_size - 1e-12 <= self.empirical_size <= 1.0):
            raise ValueError("empirical size must lie in [nominal size, 1]")
        if not all(np.isfinite(v) for v in self.params.values()):
            raise ValueError("parameters must be finite")

    def as_row(self) -> dict:
        row = asdict(self)
        params = row.pop("params")
        row.update({k: params.get(k, "") for k in ("rho", "gamma", "kappa", "N", "h", "alpha")})
        return row


def distortion_report(
    scenario: str,
    strategy: str,
    alpha: float = 0.05,
    h: float = 0.0,
    rho: float = 0.5,
    gamma: float = 1.0,
    kappa: float = 0.5,
    N: int = 200,
    law: RhoHatLaw | None = None,
) -> DistortionReport:
    """Size and bias for one scenario.

    Bias is on the coefficient scale for ``covariate`` and ``dataset``
    (``dataset`` uses ``rho = 0`` limits and reports ``nan`` bias), the
    scaled limiting mean for ``iv`` and zero for ``variance``.
    """
    if scenario == "covariate":
        size = size_cov(alpha, rho)
        bias = bias_cov(h, rho, alpha, N, strategy)
        params = {"rho": rho, "N": N, "h": h, "alpha": alpha}
    elif scenario == "dataset":
        size = size_cov(alpha, 0.0)
        bias = float("nan")
        params = {"N": N, "h": h, "alpha": alpha}
    elif scenario == "iv":
        size = size_iv(alpha)
        bias = bias_iv(h, alpha, gamma, strategy)
        params = {"gamma": gamma, "h": h, "alpha": alpha}
    elif scenario == "variance":
        if law is None:
            raise ValueError("variance scenario needs a RhoHatLaw")
        size = size_variance(alpha, law, kappa)
        bias = 0.0
        params = {"kappa": kappa, "N": law.N, "h": h, "alpha": alpha}
    else:
        raise ValueError(f"unknown scenario {scenario!r}")
    return DistortionReport(scenario, strategy, alpha, size, bias, params)
