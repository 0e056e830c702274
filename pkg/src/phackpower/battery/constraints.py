"""Affine inequality systems on histogram bin proportions.

Proportions refer to the equal-width bins of a :class:`HistogramSpec`
window. With ``scope="window"`` they are conditional on the window and the
last bin is eliminated through the adding-up constraint, so systems act on
``J - 1`` core proportions. With ``scope="total"`` they are shares of the
whole sample, the mass outside the window is the eliminated cell and systems
act on all ``J`` window bins.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from ..numkit import QuadratureSpec, integrate
from ..pcurve import null_upper_bound
from .common import HistogramSpec

__all__ = ["ConstraintSystem", "build_constraints", "KINDS", "LABELS", "SCOPES"]

KINDS = ("CS1", "CSUB", "CS2B")
SCOPES = ("window", "total")
LABELS = ("monotonicity", "2-monotonicity", "bound0", "bound1", "bound2")

BoundSource = Callable[[np.ndarray, int, str, float, float], np.ndarray]


@dataclass(frozen=True)
class ConstraintSystem:
    """``A mu <= b`` on core proportions.

    Attributes
    ----------
    A : ndarray, shape (rows, J - 1) or (rows, J)
    b : ndarray, shape (rows,)
    labels : tuple of str
        One of :data:`LABELS` per row.
    vacuous : ndarray of bool
        Bound rows whose kernel reaches ``p = 0``. The bound integral diverges
        there, so ``b`` holds the trivial bound implied by proportions in
        ``[0, 1]`` instead.
    scope : {"window", "total"}
    """

    A: np.ndarray
    b: np.ndarray
    labels: tuple[str, ...]
    vacuous: np.ndarray
    scope: str = "total"

    def __post_init__(self):
        if self.A.ndim != 2 or self.A.shape[0] < 1 or self.A.shape[0] != self.b.shape[0]:
            raise ValueError("A must be (rows, cols) with rows >= 1 matching b")
        if len(self.labels) != self.A.shape[0] or self.vacuous.shape != self.b.shape:
            raise ValueError("labels and vacuous must have one entry per row")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("constraint entries must be finite")
        if not set(self.labels) <= set(LABELS):
            raise ValueError("unknown row label")
        if self.scope not in SCOPES:
            raise ValueError(f"scope must be one of {SCOPES}")

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def select(self, labels) -> "ConstraintSystem":
        keep = np.array([lab in labels for lab in self.labels])
        return ConstraintSystem(
            self.A[keep], self.b[keep], tuple(l for l, k in zip(self.labels, keep) if k), self.vacuous[keep],
            self.scope,
        )

    def slack(self, mu) -> np.ndarray:
        """``b - A mu``; non-negative entries mean the rows hold."""
        return self.b - self.A @ np.asarray(mu, dtype=float)


def _default_bound(p, order, sided, cap, floor):
    return null_upper_bound(p, order, sided, cap, floor)


def _kernel_integral(bound, order: int, knots: np.ndarray, quad: QuadratureSpec) -> float:
    """``int k(s) B(s) ds`` with ``k`` the B-spline kernel of the given order
    on consecutive ``knots`` (box, hat, quadratic), scaled so that the
    matching difference of bin proportions equals ``int k f^{(order)}``."""
    w = knots[1] - knots[0]
    lo = knots[0]
    if order == 0:
        kern = lambda s: np.ones_like(s)
    elif order == 1:
        kern = lambda s: np.where(s <= knots[1], s - lo, knots[2] - s)
    else:

        def kern(s):
            u = (s - lo) / w
            return w * w * np.where(
                u <= 1.0, 0.5 * u * u, np.where(u <= 2.0, 0.5 * (-2.0 * u * u + 6.0 * u - 3.0), 0.5 * (3.0 - u) ** 2)
            )

    spec = QuadratureSpec(node_count=quad.node_count, abs_tol=quad.abs_tol, domain_split=tuple(knots[1:-1]),
                          max_panels=quad.max_panels, rel_tol=quad.rel_tol)
    return float(integrate(lambda s: kern(s) * bound(s, order), knots[0], knots[-1], spec))


def _bound_rows(spec: HistogramSpec, sided: str, source: BoundSource, quad: QuadratureSpec, scope: str):
    J, x = spec.J, spec.edges
    rows, rhs, labels, vac = [], [], [], []
    cap, floor = (spec.upper, spec.lower) if scope == "window" else (1.0, 0.0)

    def bound(s, order):
        return source(s, order, sided, cap, floor)

    # order k row j: sum_i coef_i pi_{j+i} <= int k_j B_k, kernel on bins j..j+k
    for order, coefs, trivial in ((0, (1.0,), 1.0), (1, (1.0, -1.0), 1.0), (2, (1.0, -2.0, 1.0), 2.0)):
        for j in range(J - order):
            a = np.zeros(J)
            a[j : j + order + 1] = coefs
            knots = x[j : j + order + 2]
            if knots[0] <= 0.0:
                val, v = trivial, True
            else:
                val, v = _kernel_integral(bound, order, knots, quad), False
                if val >= trivial:
                    val, v = trivial, True
            rows.append(a)
            rhs.append(val)
            labels.append(f"bound{order}")
            vac.append(v)
    return rows, rhs, labels, vac


def _shape_rows(J: int, second: bool):
    rows, labels = [], []
    for j in range(J - 1):
        a = np.zeros(J)
        a[j], a[j + 1] = -1.0, 1.0
        rows.append(a)
        labels.append("monotonicity")
    if second:
        for j in range(J - 2):
            a = np.zeros(J)
            a[j : j + 3] = (-1.0, 2.0, -1.0)
            rows.append(a)
            labels.append("2-monotonicity")
    return rows, [0.0] * len(rows), labels, [False] * len(rows)


@lru_cache(maxsize=64)
def _cached(kind: str, spec: HistogramSpec, sided: str, scope: str) -> ConstraintSystem:
    return _build(kind, spec, sided, _default_bound, QuadratureSpec(abs_tol=1e-9), scope)


def _build(kind, spec, sided, source, quad, scope) -> ConstraintSystem:
    rows, rhs, labels, vac = [], [], [], []
    if kind in ("CS1", "CS2B"):
        for acc, part in zip((rows, rhs, labels, vac), _shape_rows(spec.J, kind == "CS2B")):
            acc.extend(part)
    if kind in ("CSUB", "CS2B"):
        for acc, part in zip((rows, rhs, labels, vac), _bound_rows(spec, sided, source, quad, scope)):
            acc.extend(part)
    A = np.array(rows)
    b = np.array(rhs, dtype=float)
    if scope == "window":
        # pi_J = 1 - sum(core)
        b = b - A[:, -1]
        A = A[:, :-1] - A[:, -1:]
    out = ConstraintSystem(A, b, tuple(labels), np.array(vac, dtype=bool), scope)
    out.A.setflags(write=False)
    out.b.setflags(write=False)
    return out


def build_constraints(
    kind: str,
    spec: HistogramSpec | None = None,
    sided: str = "two",
    bound_source: Optional[BoundSource] = None,
    quad: QuadratureSpec | None = None,
    scope: str = "total",
) -> ConstraintSystem:
    """Inequality system for the ``CS1``, ``CSUB`` or ``CS2B`` test.

    ``CS1`` has the ``J - 1`` monotonicity rows. ``CSUB`` has bound rows of
    order 0 (``J`` rows), 1 (``J - 1``) and 2 (``J - 2``): a bin proportion,
    a first difference and a second difference are capped by the integral of
    the density, slope or curvature bound against the box, hat or quadratic
    B-spline kernel spanning the bins involved. ``CS2B`` stacks monotonicity,
    non-negative second differences and all bound rows.

    Parameters
    ----------
    bound_source : callable, optional
        ``f(p, order, sided, upper, lower)`` returning the bound curve;
        defaults to :func:`phackpower.pcurve.null_upper_bound`. Systems built
        with the default source are cached.
    scope : {"window", "total"}
        ``"window"`` bounds the window-conditional density by the supremum
        of single-effect curves divided by their window mass. ``"total"``
        bounds unconditional shares by the unconditional supremum.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if sided not in ("one", "two"):
        raise ValueError("sided must be 'one' or 'two'")
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    spec = spec or HistogramSpec()
    if bound_source is None and quad is None:
        return _cached(kind, spec, sided, scope)
    return _build(kind, spec, sided, bound_source or _default_bound, quad or QuadratureSpec(abs_tol=1e-9), scope)
