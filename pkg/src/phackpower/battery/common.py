"""Shared types for the test battery."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = ["HistogramSpec", "TestResult", "FLAGS", "window_values"]

FLAGS = ("qp_singular_nonreject", "insufficient_sample", "bandwidth_truncated", "infinite_statistic")


@dataclass(frozen=True)
class HistogramSpec:
    """Equal-width bins on the analysis window ``(lower, upper]``."""

    lower: float = 0.0
    upper: float = 0.15
    J: int = 15

    def __post_init__(self):
        if not (0.0 <= self.lower < self.upper <= 1.0):
            raise ValueError("window must satisfy 0 <= lower < upper <= 1")
        if self.J < 2:
            raise ValueError("J must be at least 2")

    @property
    def width(self) -> float:
        return (self.upper - self.lower) / self.J

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.J + 1)

    def counts(self, pvalues) -> np.ndarray:
        """Bin counts with right-closed bins ``(x_{j-1}, x_j]``."""
        p = window_values(pvalues, self.lower, self.upper)
        idx = np.ceil((p - self.lower) / self.width).astype(int) - 1
        return np.bincount(np.clip(idx, 0, self.J - 1), minlength=self.J)


def window_values(pvalues, lower: float, upper: float) -> np.ndarray:
    p = np.asarray(pvalues, dtype=float)
    return p[(p > lower) & (p <= upper)]


@dataclass(frozen=True)
class TestResult:
    """Outcome of one test.

    Attributes
    ----------
    name : str
    statistic : float
    reject : bool
    pvalue : float, optional
    critical_value : float, optional
    flags : tuple of str
        Subset of :data:`FLAGS`.
    meta : dict
        Test-specific diagnostics (sample size, degrees of freedom, ...).
    """

    __test__ = False  # keep pytest from collecting this class

    name: str
    statistic: float
    reject: bool
    pvalue: Optional[float] = None
    critical_value: Optional[float] = None
    flags: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        return {
            "test": self.name,
            "statistic": self.statistic,
            "pvalue": "" if self.pvalue is None else self.pvalue,
            "critical_value": "" if self.critical_value is None else self.critical_value,
            "reject": int(self.reject),
            "flags": ";".join(self.flags),
        }
