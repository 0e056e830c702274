"""Monte Carlo studies with specification search and pools of reported p-values.

Replications are simulated in fixed-size blocks. Block ``b`` draws from
``SeedSequence(seed, spawn_key=(b,))``, so a pool depends only on
``(config, strategy, reps, seed)`` and not on how blocks are scheduled.
Within a block every specification is estimated from Gram matrices, which
keeps the cost linear in the number of replications.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Iterator, NamedTuple, Optional

import numpy as np

from ..numkit import EffectDistribution
from .estimators import pvalue_from_t

__all__ = [
    "DGP_SCENARIOS",
    "DGPConfig",
    "PoolEntry",
    "SimPool",
    "BLOCK_SIZE",
    "draw_block",
    "specification_table",
    "run_strategy",
    "simulate_pool",
    "resolve_strategy",
]

DGP_SCENARIOS = ("covariate", "iv", "lag", "cluster")
BLOCK_SIZE = 2000
_STRATEGIES = ("threshold_g2s", "threshold_s2g", "minimum")


@dataclass(frozen=True)
class DGPConfig:
    """Data-generating process for one simulated literature.

    Attributes
    ----------
    scenario : {"covariate", "iv", "lag", "cluster"}
    N : int
        Observations per study.
    K : int
        Number of candidate controls or instruments.
    effect : EffectDistribution
        Distribution of the normalized effect ``h``.
    sided : {"one", "two"}
    alpha : float
        Significance level the researchers target.
    endog_cov : float
        Covariance of structural and first-stage errors (IV).
    pi_range, gamma_range : tuple of float
        Uniform ranges of first-stage coefficients and of the correlation
        loadings of controls or instruments.
    beta_scale : float, optional
        ``beta = h / (beta_scale * sqrt(N))``; defaults to 3 for IV and 1
        otherwise.
    f_screen : float, optional
        Drop IV specifications whose first-stage F is not above this value.
    cluster_levels : tuple of int
        Cluster counts in search order; the first is the initial choice.
    max_lags : int
        Cap on the BIC lag choice and on the minimum search.
    extra_lags : int
        Additional lags tried by the threshold lag search.
    redraw_design : bool
        Redraw loadings and first-stage coefficients in every replication.
    """

    scenario: str
    N: int = 200
    K: int = 3
    effect: EffectDistribution = field(default_factory=lambda: EffectDistribution.point_mass(0.0))
    sided: str = "two"
    alpha: float = 0.05
    endog_cov: float = 0.5
    pi_range: tuple[float, float] = (1.0, 3.0)
    gamma_range: tuple[float, float] = (-0.8, 0.8)
    beta_scale: Optional[float] = None
    f_screen: Optional[float] = None
    cluster_levels: tuple[int, ...] = (20, 40, 50, 100, 200)
    max_lags: int = 4
    extra_lags: int = 4
    redraw_design: bool = True

    def __post_init__(self):
        if self.scenario not in DGP_SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.sided not in ("one", "two"):
            raise ValueError("sided must be 'one' or 'two'")
        if self.scenario in ("covariate", "iv") and self.K < 1:
            raise ValueError("K must be at least 1")
        if self.N < self.K + 3:
            raise ValueError("N must exceed K + 2")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if any(self.N % g for g in self.cluster_levels) or not self.cluster_levels:
            raise ValueError("cluster levels must divide N")
        if self.max_lags < 0 or self.extra_lags < 0:
            raise ValueError("lag counts must be non-negative")
        if self.max_lags + self.extra_lags >= self.N - 1:
            raise ValueError("too many lags for the sample size")
        lo, hi = self.gamma_range
        if not (-1.0 < lo <= hi < 1.0):
            raise ValueError("gamma_range must lie inside (-1, 1)")
        if self.pi_range[0] > self.pi_range[1]:
            raise ValueError("pi_range must be increasing")
        if abs(self.endog_cov) >= 1.0:
            raise ValueError("endog_cov must lie in (-1, 1)")

    @property
    def scale(self) -> float:
        if self.beta_scale is not None:
            return float(self.beta_scale)
        return 3.0 if self.scenario == "iv" else 1.0

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "N": self.N,
            "K": self.K,
            "effect": self.effect.to_dict(),
            "sided": self.sided,
            "alpha": self.alpha,
            "endog_cov": self.endog_cov,
            "pi_range": list(self.pi_range),
            "gamma_range": list(self.gamma_range),
            "beta_scale": self.beta_scale,
            "f_screen": self.f_screen,
            "cluster_levels": list(self.cluster_levels),
            "max_lags": self.max_lags,
            "extra_lags": self.extra_lags,
            "redraw_design": self.redraw_design,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DGPConfig":
        d = dict(d)
        eff = d.pop("effect", None)
        if eff is not None:
            kind = eff.get("kind")
            if kind == "point_mass":
                d["effect"] = EffectDistribution.point_mass(eff["h0"])
            elif kind == "gamma":
                d["effect"] = EffectDistribution.gamma(eff["shape"], eff["rate"])
            elif kind == "empirical":
                d["effect"] = EffectDistribution.empirical(eff["sample"])
            else:
                raise ValueError(f"unknown effect kind {kind!r}")
        for key in ("pi_range", "gamma_range", "cluster_levels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def resolve_strategy(scenario: str, strategy: str) -> str:
    """Canonical strategy name; ``"threshold"`` means general-to-specific."""
    s = {"threshold": "threshold_g2s", "g2s": "threshold_g2s", "s2g": "threshold_s2g"}.get(strategy, strategy)
    if s not in _STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if s == "threshold_s2g" and scenario != "covariate":
        raise ValueError("specific-to-general search applies to control selection only")
    return s


# ---------------------------------------------------------------------------
# specification tables


def specification_table(config: DGPConfig, strategy: str) -> tuple[list, list[list[int]]]:
    """Specifications and search tiers.

    Returns ``(specs, tiers)`` where ``specs`` lists specification descriptors
    (control or instrument index tuples, lag counts, or cluster counts) and
    ``tiers`` lists index groups in search order. The first tier holds only
    the initial specification.
    """
    strategy = resolve_strategy(config.scenario, strategy)
    K = config.K
    if config.scenario in ("covariate", "iv"):
        sizes = range(K, -1, -1) if config.scenario == "covariate" else range(K, 0, -1)
        specs = [c for k in sizes for c in combinations(range(K), k)]
        index = {s: i for i, s in enumerate(specs)}
        by_size = {k: [index[c] for c in combinations(range(K), k)] for k in sizes}
        order = list(sizes)
        if strategy == "threshold_s2g":
            order = order[::-1]
        return specs, [by_size[k] for k in order]
    if config.scenario == "lag":
        # lag tiers depend on the data-driven initial lag and are built per replication
        specs = list(range(config.max_lags + config.extra_lags + 1))
        return specs, []
    specs = list(config.cluster_levels)
    return specs, [[i] for i in range(len(specs))]


# ---------------------------------------------------------------------------
# data generation


def _uniform(rng, rng_design, lo, hi, size, redraw: bool):
    if redraw:
        return rng.uniform(lo, hi, size=size)
    row = rng_design.uniform(lo, hi, size=size[1:])
    return np.broadcast_to(row, size).copy()


def draw_block(config: DGPConfig, rng: np.random.Generator, size: int, design_rng=None) -> dict:
    """Draw the raw data of ``size`` replications.

    Returns a dict of arrays with a leading replication axis. ``design_rng``
    supplies loadings shared across replications when ``redraw_design`` is
    off.
    """
    N, K = config.N, config.K
    h = config.effect.draw(rng, size)
    beta = h / (config.scale * np.sqrt(N))
    out = {"h": h, "beta": beta}
    if config.scenario == "covariate":
        gam = _uniform(rng, design_rng, *config.gamma_range, (size, K), config.redraw_design)
        X = rng.standard_normal((size, N))
        eps = rng.standard_normal((size, N, K))
        u = rng.standard_normal((size, N))
        Z = gam[:, None, :] * X[:, :, None] + np.sqrt(1.0 - gam**2)[:, None, :] * eps
        out.update(X=X, Z=Z, Y=beta[:, None] * X + u, gamma=gam)
    elif config.scenario == "iv":
        gam = _uniform(rng, design_rng, *config.gamma_range, (size, K), config.redraw_design)
        pi = _uniform(rng, design_rng, *config.pi_range, (size, K), config.redraw_design)
        xi = rng.standard_normal((size, N))
        eps = rng.standard_normal((size, N, K))
        e1 = rng.standard_normal((size, N))
        e2 = rng.standard_normal((size, N))
        c = config.endog_cov
        U = e1
        V = c * e1 + np.sqrt(1.0 - c * c) * e2
        Z = gam[:, None, :] * xi[:, :, None] + np.sqrt(1.0 - gam**2)[:, None, :] * eps
        X = np.einsum("bnk,bk->bn", Z, pi) + V
        out.update(X=X, Z=Z, Y=beta[:, None] * X + U, gamma=gam, pi=pi)
    else:
        X = rng.standard_normal((size, N))
        U = rng.standard_normal((size, N))
        out.update(X=X, Y=beta[:, None] * X + U)
    return out


# ---------------------------------------------------------------------------
# batched estimation: returns (pvalues, betas) of shape (B, n_specs), NaN = skipped


def _gram(cols: list[np.ndarray]) -> np.ndarray:
    V = np.stack(cols, axis=1)
    return np.matmul(V, V.transpose(0, 2, 1))


def _sym_inverse(A: np.ndarray) -> np.ndarray:
    """Batched inverse of symmetric PSD matrices; ill-conditioned ones give NaN."""
    ev = np.linalg.eigvalsh(A)
    ok = ev[:, 0] > 1e-12 * ev[:, -1]
    out = np.full(A.shape, np.nan)
    if np.any(ok):
        out[ok] = np.linalg.inv(A[ok])
    return out


def _covariate_stats(data: dict, config: DGPConfig, specs: list):
    X, Z, Y = data["X"], data["Z"], data["Y"]
    B, N = X.shape
    K = config.K
    G = _gram([np.ones_like(X), X] + [Z[:, :, k] for k in range(K)] + [Y])
    yy = G[:, -1, -1]
    P = np.full((B, len(specs)), np.nan)
    Bt = np.full((B, len(specs)), np.nan)
    for j, s in enumerate(specs):
        cols = [0, 1] + [2 + k for k in s]
        Ainv = _sym_inverse(G[:, cols][:, :, cols])
        xy = G[:, cols, -1]
        coef = np.einsum("bij,bj->bi", Ainv, xy)
        rss = yy - np.einsum("bi,bi->b", coef, xy)
        s2 = rss / (N - len(cols))
        se = np.sqrt(s2 * Ainv[:, 1, 1])
        t = coef[:, 1] / se
        P[:, j] = pvalue_from_t(t, config.sided)
        Bt[:, j] = coef[:, 1]
    return P, Bt, None


def _iv_stats(data: dict, config: DGPConfig, specs: list):
    X, Z, Y = data["X"], data["Z"], data["Y"]
    B, N = X.shape
    K = config.K
    G = _gram([np.ones_like(X), X, Y] + [Z[:, :, k] for k in range(K)])
    P = np.full((B, len(specs)), np.nan)
    Bt = np.full((B, len(specs)), np.nan)
    F = np.full((B, len(specs)), np.nan)
    R = [0, 1]
    RR = G[:, R][:, :, R]
    RY = G[:, R, 2]
    yy = G[:, 2, 2]
    xx = G[:, 1, 1]
    sx = G[:, 0, 1]
    for j, s in enumerate(specs):
        W = [0] + [3 + k for k in s]
        WW = G[:, W][:, :, W]
        WR = G[:, W][:, :, R]
        WY = G[:, W, 2]
        WWinv = _sym_inverse(WW)
        Pi = np.matmul(WWinv, WR)
        RPR = np.matmul(WR.transpose(0, 2, 1), Pi)
        RPY = np.einsum("bji,bj->bi", Pi, WY)
        RPRinv = _sym_inverse(np.where(np.isfinite(RPR), RPR, 0.0))
        RPRinv[~np.isfinite(RPR).all(axis=(1, 2))] = np.nan
        coef = np.einsum("bij,bj->bi", RPRinv, RPY)
        ssr = yy - 2.0 * np.einsum("bi,bi->b", coef, RY) + np.einsum("bi,bij,bj->b", coef, RR, coef)
        se = np.sqrt(ssr / N * RPRinv[:, 1, 1])
        t = coef[:, 1] / se
        # first stage: X on W; column 1 of WR is W'X
        wx = WR[:, :, 1]
        rss_u = xx - np.einsum("bi,bij,bj->b", wx, WWinv, wx)
        rss_r = xx - sx * sx / N
        q = len(s)
        fstat = (rss_r - rss_u) / q / (rss_u / (N - q - 1))
        P[:, j] = pvalue_from_t(t, config.sided)
        Bt[:, j] = coef[:, 1]
        F[:, j] = fstat
    return P, Bt, F


def _ols_scores(data: dict):
    X, Y = data["X"], data["Y"]
    xc = X - X.mean(axis=1, keepdims=True)
    yc = Y - Y.mean(axis=1, keepdims=True)
    sxx = np.einsum("bn,bn->b", xc, xc)
    beta = np.einsum("bn,bn->b", xc, yc) / sxx
    resid = yc - beta[:, None] * xc
    return beta, resid, xc * resid, sxx


def _lag_stats(data: dict, config: DGPConfig):
    """p-values for lags ``0..max_lags+extra_lags`` plus the BIC lag."""
    beta, resid, s, sxx = _ols_scores(data)
    B, N = s.shape
    L = config.max_lags + config.extra_lags
    gam = np.stack([np.einsum("bn,bn->b", s[:, l:], s[:, : N - l]) for l in range(L + 1)], axis=1)
    P = np.full((B, L + 1), np.nan)
    for lag in range(L + 1):
        w = np.array([1.0] + [2.0 * (1.0 - l / (lag + 1.0)) for l in range(1, lag + 1)])
        v = gam[:, : lag + 1] @ w
        with np.errstate(invalid="ignore"):
            se = np.where(v > 0, np.sqrt(np.where(v > 0, v, 1.0)) / sxx, np.nan)
        P[:, lag] = pvalue_from_t(beta / se, config.sided)
    Bt = np.repeat(beta[:, None], L + 1, axis=1)
    return P, Bt, _bic_lags(resid, config.max_lags)


def _bic_lags(e: np.ndarray, max_lags: int) -> np.ndarray:
    B, n = e.shape
    if max_lags == 0:
        return np.zeros(B, dtype=int)
    m = n - max_lags
    S = np.stack([e[:, max_lags - l : n - l] for l in range(max_lags + 1)], axis=1)
    M = np.einsum("bin,bjn->bij", S, S)
    bic = np.empty((B, max_lags + 1))
    bic[:, 0] = m * np.log(M[:, 0, 0] / m)
    for p in range(1, max_lags + 1):
        A = M[:, 1 : p + 1, 1 : p + 1]
        g = M[:, 1 : p + 1, 0]
        coef = np.linalg.solve(A, g[..., None])[..., 0]
        rss = M[:, 0, 0] - np.einsum("bi,bi->b", coef, g)
        bic[:, p] = m * np.log(rss / m) + p * np.log(m)
    return np.argmin(bic, axis=1)


def _cluster_stats(data: dict, config: DGPConfig):
    beta, _, s, sxx = _ols_scores(data)
    B, N = s.shape
    P = np.full((B, len(config.cluster_levels)), np.nan)
    for j, g in enumerate(config.cluster_levels):
        sums = s.reshape(B, g, N // g).sum(axis=2)
        v = np.einsum("bg,bg->b", sums, sums)
        se = np.sqrt(v) / sxx
        P[:, j] = pvalue_from_t(beta / se, config.sided)
    return P, np.repeat(beta[:, None], len(config.cluster_levels), axis=1), None


# ---------------------------------------------------------------------------
# search rules


def _pick_threshold(P: np.ndarray, tiers: list[list[int]], alpha: float):
    """First tier whose best p-value is significant, else the overall best.

    Returns (chosen spec index, number of specifications tried).
    """
    B = P.shape[0]
    chosen = np.full(B, -1)
    tried = np.zeros(B, dtype=int)
    done = np.zeros(B, dtype=bool)
    for tier in tiers:
        sub = P[:, tier]
        valid = ~np.all(np.isnan(sub), axis=1)
        best = np.where(valid, np.nanargmin(np.where(np.isnan(sub), np.inf, sub), axis=1), 0)
        bestp = sub[np.arange(B), best]
        tried += np.where(done, 0, np.sum(~np.isnan(sub), axis=1))
        hit = ~done & valid & (bestp <= alpha)
        chosen[hit] = np.asarray(tier)[best[hit]]
        done |= hit
    cols = sorted({i for t in tiers for i in t})
    sub = np.where(np.isnan(P[:, cols]), np.inf, P[:, cols])
    fallback = np.asarray(cols)[np.argmin(sub, axis=1)]
    chosen = np.where(done, chosen, fallback)
    return chosen, tried


def _select(P, Bt, F, bic, config: DGPConfig, strategy: str, specs, tiers):
    """Apply the search rule to a block; returns arrays and a keep mask."""
    B = P.shape[0]
    rows = np.arange(B)
    search = P.copy()
    if config.scenario == "iv" and config.f_screen is not None:
        search[~(F > config.f_screen)] = np.nan
    if config.scenario == "lag":
        initial = bic
        if strategy == "minimum":
            search[:, config.max_lags + 1 :] = np.nan
            chosen = np.nanargmin(np.where(np.isnan(search), np.inf, search), axis=1)
            tried = np.sum(~np.isnan(search), axis=1)
        else:
            steps = initial[:, None] + np.arange(config.extra_lags + 1)[None, :]
            path = search[rows[:, None], steps]
            hit = path <= config.alpha
            first = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
            best = np.argmin(np.where(np.isnan(path), np.inf, path), axis=1)
            pick = np.where(first >= 0, first, best)
            chosen = steps[rows, pick]
            tried = np.where(first >= 0, first + 1, config.extra_lags + 1)
    else:
        initial = np.full(B, tiers[0][0])
        if strategy == "minimum":
            chosen = np.argmin(np.where(np.isnan(search), np.inf, search), axis=1)
            tried = np.sum(~np.isnan(search), axis=1)
        else:
            chosen, tried = _pick_threshold(search, tiers, config.alpha)
    p_nohack = P[rows, initial]
    p_hacked = search[rows, chosen]
    keep = np.isfinite(p_nohack) & np.isfinite(p_hacked)
    return p_nohack, p_hacked, Bt[rows, chosen], tried, keep


def _block_stats(data: dict, config: DGPConfig, specs):
    if config.scenario == "covariate":
        P, Bt, F = _covariate_stats(data, config, specs)
        return P, Bt, F, None
    if config.scenario == "iv":
        P, Bt, F = _iv_stats(data, config, specs)
        return P, Bt, F, None
    if config.scenario == "lag":
        P, Bt, bic = _lag_stats(data, config)
        return P, Bt, None, bic
    P, Bt, F = _cluster_stats(data, config)
    return P, Bt, F, None


# ---------------------------------------------------------------------------
# pools


class PoolEntry(NamedTuple):
    p_nohack: float
    p_hacked: float
    beta_reported: float
    n_specs_tried: int


@dataclass
class SimPool:
    """Reported and initial p-values from simulated studies.

    ``p_nohack`` is the initial specification's p-value (what a researcher
    who does not search reports) and ``p_hacked`` the result of the search.
    """

    p_nohack: np.ndarray
    p_hacked: np.ndarray
    beta_reported: np.ndarray
    n_specs_tried: np.ndarray
    config: DGPConfig
    strategy: str
    seed: int
    dropped: int = 0

    def __len__(self) -> int:
        return int(self.p_hacked.size)

    def entries(self) -> Iterator[PoolEntry]:
        for row in zip(self.p_nohack, self.p_hacked, self.beta_reported, self.n_specs_tried):
            yield PoolEntry(float(row[0]), float(row[1]), float(row[2]), int(row[3]))

    def digest(self) -> str:
        meta = {"config": self.config.to_dict(), "strategy": self.strategy, "seed": self.seed, "reps": len(self)}
        return hashlib.sha256(json.dumps(meta, sort_keys=True).encode()).hexdigest()


def _run_block(config: DGPConfig, strategy: str, size: int, rng, design_rng):
    specs, tiers = specification_table(config, strategy)
    data = draw_block(config, rng, size, design_rng)
    P, Bt, F, bic = _block_stats(data, config, specs)
    return _select(P, Bt, F, bic, config, strategy, specs, tiers)


def _design_rng(config: DGPConfig, seed: int):
    if config.redraw_design:
        return None
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**32 - 1,)))


def run_strategy(config: DGPConfig, strategy: str, rng: np.random.Generator) -> Optional[PoolEntry]:
    """Simulate one study and apply the search; ``None`` if every
    specification had to be skipped."""
    strategy = resolve_strategy(config.scenario, strategy)
    design = None if config.redraw_design else rng
    pn, ph, br, nt, keep = _run_block(config, strategy, 1, rng, design)
    if not keep[0]:
        return None
    return PoolEntry(float(pn[0]), float(ph[0]), float(br[0]), int(nt[0]))


def _block_task(args):
    config, strategy, b, size, seed = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
    return _run_block(config, strategy, size, rng, _design_rng(config, seed))


def simulate_pool(
    config: DGPConfig, strategy: str, reps: int, seed: int = 0, workers: int = 1
) -> SimPool:
    """Simulate ``reps`` studies.

    The result depends only on the arguments other than ``workers``.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    strategy = resolve_strategy(config.scenario, strategy)
    tasks = [
        (config, strategy, b, min(BLOCK_SIZE, reps - b * BLOCK_SIZE), seed)
        for b in range((reps + BLOCK_SIZE - 1) // BLOCK_SIZE)
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_block_task, tasks))
    else:
        parts = [_block_task(t) for t in tasks]
    pn, ph, br, nt, keep = (np.concatenate(x) for x in zip(*parts))
    return SimPool(
        pn[keep], ph[keep], br[keep], nt[keep].astype(np.int32), config, strategy, seed, int((~keep).sum())
    )
