"""Simulated studies with specification search."""

from .estimators import (
    FitResult,
    SpecificationSkipped,
    bic_lag_select,
    cluster_se,
    iv_2sls_fit,
    newey_west_se,
    ols_fit,
    pvalue_from_t,
    white_se,
)
from .poolio import PoolFormatError, load_pool, save_pool
from .simulate import (
    BLOCK_SIZE,
    DGP_SCENARIOS,
    DGPConfig,
    PoolEntry,
    SimPool,
    draw_block,
    resolve_strategy,
    run_strategy,
    simulate_pool,
    specification_table,
)

__all__ = [
    "BLOCK_SIZE",
    "DGP_SCENARIOS",
    "DGPConfig",
    "FitResult",
    "PoolEntry",
    "PoolFormatError",
    "SimPool",
    "SpecificationSkipped",
    "bic_lag_select",
    "cluster_se",
    "draw_block",
    "iv_2sls_fit",
    "load_pool",
    "newey_west_se",
    "ols_fit",
    "pvalue_from_t",
    "resolve_strategy",
    "run_strategy",
    "save_pool",
    "simulate_pool",
    "specification_table",
    "white_se",
]
