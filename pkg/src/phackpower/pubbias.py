"""Observed samples: mixing searched and unsearched results, then thinning by
a p-value dependent publication probability."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dgp.simulate import SimPool

__all__ = ["SelectionRule", "ObservedSample", "selection_prob", "draw_observed", "publication_mass_ratio"]

_KINDS = ("none", "sharp", "smooth")


@dataclass(frozen=True)
class SelectionRule:
    """Publication probability as a function of the reported p-value.

    Attributes
    ----------
    kind : {"none", "sharp", "smooth"}
    cutoff : float
        Significance cutoff of the sharp rule.
    insignif_prob : float
        Publication probability above the cutoff (sharp rule).
    decay : float
        Rate ``A`` of the smooth rule ``exp(-A p)``.
    """

    kind: str = "none"
    cutoff: float = 0.05
    insignif_prob: float = 0.1
    decay: float = 8.45

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown selection kind {self.kind!r}")
        if not (0.0 < self.insignif_prob <= 1.0):
            raise ValueError("insignif_prob must lie in (0, 1]")
        if not self.decay > 0:
            raise ValueError("decay must be positive")
        if not (0.0 < self.cutoff < 1.0):
            raise ValueError("cutoff must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "cutoff": self.cutoff, "insignif_prob": self.insignif_prob, "decay": self.decay}


def selection_prob(p, rule: SelectionRule):
    """Publication probability of each p-value."""
    p = np.asarray(p, dtype=float)
    if rule.kind == "none":
        out = np.ones_like(p)
    elif rule.kind == "sharp":
        out = np.where(p <= rule.cutoff, 1.0, rule.insignif_prob)
    else:
        out = np.exp(-rule.decay * p)
    return out if out.ndim else float(out)


def publication_mass_ratio(rule: SelectionRule, cutoff: float = 0.05) -> float:
    """Ratio of publication mass below ``cutoff`` to the mass above it for a
    uniform p-curve. Useful to calibrate the smooth rule against the sharp one."""
    if rule.kind == "none":
        return cutoff / (1.0 - cutoff)
    if rule.kind == "sharp":
        c = rule.cutoff
        below = min(c, cutoff) + max(cutoff - c, 0.0) * rule.insignif_prob
        above = (1.0 - max(c, cutoff)) * rule.insignif_prob + max(c - cutoff, 0.0)
        return below / above
    A = rule.decay
    return (1.0 - np.exp(-A * cutoff)) / (np.exp(-A * cutoff) - np.exp(-A))


@dataclass
class ObservedSample:
    """Published p-values from one simulated literature."""

    pvalues: np.ndarray
    n_requested: int
    n_kept: int
    tau: float
    rule: SelectionRule = field(default_factory=SelectionRule)
    seed: object = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p"])
            for p in self.pvalues:
                w.writerow([repr(float(p))])


def _values(pool) -> np.ndarray:
    return np.asarray(pool, dtype=float)


def draw_observed(
    pool_hacked,
    pool_nohack,
    tau: float,
    n: int,
    rule: SelectionRule,
    seed=None,
    rng: np.random.Generator | None = None,
) -> ObservedSample:
    """Draw ``n`` studies with replacement and keep the published ones.

    Each draw comes from ``pool_hacked`` with probability ``tau`` and from
    ``pool_nohack`` otherwise, then survives with probability
    :func:`selection_prob`. The pools are arrays of p-values or
    :class:`SimPool` objects (their ``p_hacked`` and ``p_nohack`` columns are
    used respectively). Kept values are returned in draw order.
    """
    hacked = pool_hacked.p_hacked if isinstance(pool_hacked, SimPool) else _values(pool_hacked)
    nohack = pool_nohack.p_nohack if isinstance(pool_nohack, SimPool) else _values(pool_nohack)
    if hacked.size == 0 or nohack.size == 0:
        raise ValueError("pools must be non-empty")
    if not (0.0 <= tau <= 1.0):
        raise ValueError("tau must lie in [0, 1]")
    if n < 1:
        raise ValueError("n must be positive")
    if rng is None:
        rng = np.random.default_rng(seed)
    from_hacked = rng.random(n) < tau
    idx_h = rng.integers(0, hacked.size, size=n)
    idx_n = rng.integers(0, nohack.size, size=n)
    p = np.where(from_hacked, hacked[idx_h], nohack[idx_n])
    keep = rng.random(n) < selection_prob(p, rule)
    kept = p[keep]
    return ObservedSample(kept, n, int(kept.size), tau, rule, seed)
