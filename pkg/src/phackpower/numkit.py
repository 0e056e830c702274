"""Numerical primitives: normal functions, bivariate normal CDF, adaptive
Gauss-Legendre quadrature, effect distributions and mixture integrals.

All functions accept numpy arrays and broadcast where that makes sense.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "norm_cdf",
    "norm_pdf",
    "norm_sf",
    "norm_quantile",
    "upper_quantile",
    "bvn_cdf",
    "QuadratureSpec",
    "integrate",
    "EffectDistribution",
    "mixture_integral",
    "fit_gamma_mle",
    "truncated_gaussian_moment",
]

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def norm_cdf(x):
    """Standard normal CDF."""
    return special.ndtr(x)


def norm_sf(x):
    """Standard normal survival function, accurate in the upper tail."""
    return special.ndtr(-np.asarray(x, dtype=float))


def norm_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def norm_quantile(q):
    """Inverse of the standard normal CDF.

    Parameters
    ----------
    q : float or array_like
        Probabilities strictly inside (0, 1).

    Raises
    ------
    ValueError
        If any entry lies outside the open unit interval.
    """
    q = np.asarray(q, dtype=float)
    if np.any(~((q > 0.0) & (q < 1.0))):
        raise ValueError("norm_quantile requires probabilities in (0, 1)")
    out = special.ndtri(q)
    return out if out.ndim else float(out)


def upper_quantile(p):
    """Critical value ``z`` with upper-tail probability ``p``.

    Computed as ``-ndtri(p)`` so small ``p`` keeps full relative precision.
    """
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise ValueError("upper_quantile requires probabilities in (0, 1)")
    out = -special.ndtri(p)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# bivariate normal


def _owens_t(h, a):
    """Owen's T with support for infinite ``a``."""
    h = np.asarray(h, dtype=float)
    a = np.asarray(a, dtype=float)
    h, a = np.broadcast_arrays(h, a)
    out = np.empty(h.shape)
    inf = np.isinf(a)
    fin = ~inf
    out[fin] = special.owens_t(h[fin], a[fin])
    out[inf] = np.sign(a[inf]) * 0.5 * special.ndtr(-np.abs(h[inf]))
    return out


def bvn_cdf(x, y, rho):
    """Bivariate standard normal CDF ``P(X <= x, Y <= y)`` with correlation ``rho``.

    Uses the Owen's T decomposition, which is accurate to near machine
    precision for all finite arguments and any ``|rho| < 1``. Infinite limits
    and ``|rho| = 1`` are handled exactly.

    Parameters
    ----------
    x, y : float or array_like
        Upper limits, broadcast against each other.
    rho : float or array_like
        Correlation in ``[-1, 1]``.

    Returns
    -------
    float or ndarray
    """
    x, y, rho = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(y, dtype=float), np.asarray(rho, dtype=float)
    )
    if np.any(np.abs(rho) > 1.0) or np.any(np.isnan(rho)):
        raise ValueError("rho must lie in [-1, 1]")
    scalar = x.ndim == 0
    x, y, rho = (np.atleast_1d(v).astype(float).copy() for v in (x, y, rho))
    out = np.full(x.shape, np.nan)

    # infinite limits
    done = np.zeros(x.shape, dtype=bool)
    m = (x == -np.inf) | (y == -np.inf)
    out[m] = 0.0
    done |= m
    m = ~done & (x == np.inf)
    out[m] = special.ndtr(y[m])
    done |= m
    m = ~done & (y == np.inf)
    out[m] = special.ndtr(x[m])
    done |= m

    # degenerate correlation
    m = ~done & (rho == 1.0)
    out[m] = special.ndtr(np.minimum(x[m], y[m]))
    done |= m
    m = ~done & (rho == -1.0)
    out[m] = np.maximum(special.ndtr(x[m]) - special.ndtr(-y[m]), 0.0)
    done |= m

    # both limits zero
    m = ~done & (x == 0.0) & (y == 0.0)
    out[m] = 0.25 + np.arcsin(rho[m]) / (2.0 * np.pi)
    done |= m

    m = ~done
    if np.any(m):
        h, k, r = x[m], y[m], rho[m]
        s = np.sqrt((1.0 - r) * (1.0 + r))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            ah = np.where(h != 0.0, (k - r * h) / (h * s), np.sign(k) * np.inf)
            ak = np.where(k != 0.0, (h - r * k) / (k * s), np.sign(h) * np.inf)
        # signs rather than h * k, which underflows for tiny limits
        hk = np.sign(h) * np.sign(k)
        beta = np.where((hk > 0.0) | ((hk == 0.0) & (h + k >= 0.0)), 0.0, 0.5)
        val = 0.5 * (special.ndtr(h) + special.ndtr(k)) - _owens_t(h, ah) - _owens_t(k, ak) - beta
        out[m] = np.clip(val, 0.0, 1.0)
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureSpec:
    """Settings for adaptive Gauss-Legendre integration.

    Attributes
    ----------
    node_count : int
        Gauss-Legendre nodes per panel.
    abs_tol : float
        Absolute tolerance on the whole integral.
    rel_tol : float
        Relative tolerance per panel, for integrands of large magnitude.
    domain_split : tuple of float
        Interior breakpoints where the integrand has kinks.
    max_panels : int
        Panel budget before giving up.
    """

    node_count: int = 20
    abs_tol: float = 1e-10
    domain_split: tuple[float, ...] = ()
    max_panels: int = 4000
    rel_tol: float = 1e-12

    def __post_init__(self):
        if self.node_count < 2:
            raise ValueError("node_count must be at least 2")
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _GL_CACHE:
        x, w = special.roots_legendre(n)
        _GL_CACHE[n] = (x, w)
    return _GL_CACHE[n]


def _panel(f, a: float, b: float, n: int):
    x, w = _gl_nodes(n)
    half = 0.5 * (b - a)
    nodes = a + half * (x + 1.0)
    vals = np.asarray(f(nodes), dtype=float)
    if not np.all(np.isfinite(vals)):
        bad = nodes[np.nonzero(~np.isfinite(vals.reshape(len(nodes), -1)).any(axis=1))[0][0]]
        raise FloatingPointError(f"non-finite integrand value at x={bad!r}")
    return half * np.tensordot(w, vals, axes=(0, 0))


def _finite_map(f, a: float, b: float):
    """Return an integrand and finite limits equivalent to ``f`` on ``[a, b]``."""
    if np.isfinite(a) and np.isfinite(b):
        return f, a, b
    if np.isinf(a) and np.isinf(b):
        # x = t / (1 - t^2) on (-1, 1)
        def g(t):
            x = t / (1.0 - t * t)
            jac = (1.0 + t * t) / (1.0 - t * t) ** 2
            return _scale(f(x), jac)

        return g, -1.0, 1.0
    if np.isinf(b):
        # x = a + t / (1 - t) on [0, 1)
        def g(t):
            x = a + t / (1.0 - t)
            return _scale(f(x), 1.0 / (1.0 - t) ** 2)

        return g, 0.0, 1.0

    def g(t):
        x = b - t / (1.0 - t)
        return _scale(f(x), 1.0 / (1.0 - t) ** 2)

    return g, 0.0, 1.0


def _scale(vals, jac):
    vals = np.asarray(vals, dtype=float)
    jac = jac.reshape((-1,) + (1,) * (vals.ndim - 1))
    out = vals * jac
    # integrand decays faster than the Jacobian grows at the mapped endpoint
    return np.where(np.isfinite(jac), out, 0.0)


def integrate(f: Callable, a: float, b: float, spec: QuadratureSpec | None = None):
    """Adaptive Gauss-Legendre integral of ``f`` over ``[a, b]``.

    ``f`` receives a 1-D array of nodes and returns an array whose first axis
    matches the nodes; trailing axes are integrated componentwise. Infinite
    limits are handled by a rational change of variables.

    Raises
    ------
    FloatingPointError
        If the integrand returns a non-finite value at a node.
    RuntimeError
        If the panel budget is exhausted before reaching the tolerance.
    """
    spec = spec or QuadratureSpec()
    if a == b:
        return np.zeros_like(np.asarray(f(np.array([a])), dtype=float)[0])
    sign = 1.0
    if a > b:
        a, b, sign = b, a, -1.0
    breaks = [a] + sorted(s for s in spec.domain_split if a < s < b) + [b]
    total = 0.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        g, lo2, hi2 = _finite_map(f, lo, hi)
        total = total + _adapt(g, lo2, hi2, spec, spec.abs_tol * (len(breaks) - 1) ** -1)
    return sign * total


def _adapt(f, a: float, b: float, spec: QuadratureSpec, tol: float):
    n = spec.node_count
    width = b - a
    stack = [(a, b, _panel(f, a, b, n))]
    total = 0.0
    panels = 1
    while stack:
        lo, hi, whole = stack.pop()
        mid = 0.5 * (lo + hi)
        left = _panel(f, lo, mid, n)
        right = _panel(f, mid, hi, n)
        panels += 2
        err = np.max(np.abs(left + right - whole))
        scale = np.max(np.abs(left + right))
        if err <= max(tol * (hi - lo) / width, spec.rel_tol * scale) or hi - lo < 1e-13 * max(1.0, abs(lo)):
            total = total + left + right
            continue
        if panels > spec.max_panels:
            raise RuntimeError(f"quadrature did not converge on [{a}, {b}] (error {err:.3g})")
        stack.append((lo, mid, left))
        stack.append((mid, hi, right))
    return total


# ---------------------------------------------------------------------------
# effect distributions


@dataclass(frozen=True)
class EffectDistribution:
    """Distribution of the normalized effect ``h >= 0`` across studies.

    Use the constructors :meth:`point_mass`, :meth:`gamma` and
    :meth:`empirical` rather than the raw initializer.

    Attributes
    ----------
    kind : {"point_mass", "gamma", "empirical"}
    h0 : float
        Location of the point mass.
    shape, rate : float
        Gamma parameters (density ``rate^shape h^(shape-1) e^(-rate h) / Gamma(shape)``).
    sample : tuple of float
        Support of the empirical distribution.
    """

    kind: str
    h0: float = 0.0
    shape: float = 1.0
    rate: float = 1.0
    sample: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.kind == "point_mass":
            if not (np.isfinite(self.h0) and self.h0 >= 0):
                raise ValueError("point mass location must be finite and non-negative")
        elif self.kind == "gamma":
            if not (self.shape > 0 and self.rate > 0):
                raise ValueError("gamma shape and rate must be positive")
        elif self.kind == "empirical":
            if len(self.sample) == 0 or min(self.sample) < 0:
                raise ValueError("empirical sample must be non-empty and non-negative")
        else:
            raise ValueError(f"unknown effect distribution kind {self.kind!r}")

    @classmethod
    def point_mass(cls, h0: float) -> "EffectDistribution":
        return cls("point_mass", h0=float(h0))

    @classmethod
    def gamma(cls, shape: float, rate: float) -> "EffectDistribution":
        return cls("gamma", shape=float(shape), rate=float(rate))

    @classmethod
    def empirical(cls, sample: Sequence[float]) -> "EffectDistribution":
        return cls("empirical", sample=tuple(float(s) for s in sample))

    @property
    def mean(self) -> float:
        if self.kind == "point_mass":
            return self.h0
        if self.kind == "gamma":
            return self.shape / self.rate
        return float(np.mean(self.sample))

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` effects."""
        if self.kind == "point_mass":
            return np.full(size, self.h0)
        if self.kind == "gamma":
            return rng.gamma(self.shape, 1.0 / self.rate, size=size)
        return rng.choice(np.asarray(self.sample), size=size, replace=True)

    def to_dict(self) -> dict:
        if self.kind == "point_mass":
            return {"kind": "point_mass", "h0": self.h0}
        if self.kind == "gamma":
            return {"kind": "gamma", "shape": self.shape, "rate": self.rate}
        return {"kind": "empirical", "sample": list(self.sample)}


def mixture_integral(f: Callable, dist: EffectDistribution, quad: QuadratureSpec | None = None):
    """Average ``f(h)`` over the effect distribution.

    ``f`` maps a 1-D array of effects to an array with matching first axis.
    Point masses are evaluated exactly, empirical distributions by the sample
    mean and gamma distributions by adaptive quadrature on ``t = h / (1 + h)``.
    """
    if dist.kind == "point_mass":
        out = np.asarray(f(np.array([dist.h0])), dtype=float)[0]
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"non-finite integrand value at h={dist.h0!r}")
        return out
    if dist.kind == "empirical":
        vals = np.asarray(f(np.asarray(dist.sample)), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("non-finite integrand value on empirical support")
        return vals.mean(axis=0)

    shape, rate = dist.shape, dist.rate
    log_norm = shape * np.log(rate) - special.gammaln(shape)

    def g(t):
        t = np.asarray(t, dtype=float)
        h = t / (1.0 - t)
        with np.errstate(divide="ignore"):
            logw = log_norm + (shape - 1.0) * np.log(h) - rate * h - 2.0 * np.log1p(-t)
        w = np.exp(logw)
        vals = np.asarray(f(h), dtype=float)
        w = w.reshape((-1,) + (1,) * (vals.ndim - 1))
        return np.where(w > 0, vals * w, 0.0)

    # split at the gamma mean so the bulk of the mass gets its own panel
    m = dist.mean
    spec = quad or QuadratureSpec(abs_tol=1e-9)
    spec = replace(spec, domain_split=(m / (1.0 + m),))
    return integrate(g, 0.0, 1.0, spec)


def fit_gamma_mle(sample: Sequence[float]) -> tuple[float, float]:
    """Maximum likelihood gamma fit.

    Returns
    -------
    (shape, rate) : tuple of float

    Raises
    ------
    ValueError
        If the sample has a non-positive entry or zero variance.
    """
    x = np.asarray(sample, dtype=float)
    if x.size < 2 or np.any(x <= 0) or np.all(x == x[0]):
        raise ValueError("gamma fit needs at least two distinct positive values")
    s = np.log(x.mean()) - np.mean(np.log(x))
    shape = (3.0 - s + np.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    for _ in range(100):
        fval = np.log(shape) - special.digamma(shape) - s
        step = fval / (1.0 / shape - special.polygamma(1, shape))
        new = shape - step
        shape = new if new > 0 else 0.5 * shape
        if abs(step) <= 1e-14 * shape:
            break
    return float(shape), float(shape / x.mean())


def truncated_gaussian_moment(lower, upper, slope, shift):
    """Closed form of ``int_lower^upper w phi(w) Phi(slope w + shift) dw``.

    Limits may be infinite. Broadcasting applies to all arguments.
    """
    lower, upper, a, b = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (lower, upper, slope, shift))
    )

    def edge(w):
        # Phi(a w + b) phi(w) with the convention 0 at infinite w
        with np.errstate(invalid="ignore"):
            arg = np.where(np.isinf(w), 0.0, a * w + b)
        return np.where(np.isinf(w), 0.0, special.ndtr(arg) * norm_pdf(np.where(np.isinf(w), 0.0, w)))

    root = np.sqrt(1.0 + a * a)
    c = a * b / root
    out = (
        edge(lower)
        - edge(upper)
        + a / root * norm_pdf(b / root) * (special.ndtr(root * upper + c) - special.ndtr(root * lower + c))
    )
    return out if out.ndim else float(out)
