"""Pool persistence.

Binary layout, little-endian:

========  =====  ===================================================
offset    size   content
========  =====  ===================================================
0         8      magic ``b"PHKPOOL\\0"``
8         4      format version (uint32)
12        32     SHA-256 digest of the metadata JSON
44        8      entry count (uint64)
52        4      metadata length ``m`` (uint32)
56        m      metadata JSON (config, strategy, seed, dropped)
56 + m    28 n   records: p_nohack f8, p_hacked f8, beta f8, n_specs i4
========  =====  ===================================================

CSV pools carry the same four columns with a header row and no metadata.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .simulate import DGPConfig, SimPool, resolve_strategy

__all__ = ["MAGIC", "VERSION", "save_pool", "load_pool", "PoolFormatError"]

MAGIC = b"PHKPOOL\0"
VERSION = 1
_RECORD = np.dtype([("p_nohack", "<f8"), ("p_hacked", "<f8"), ("beta", "<f8"), ("n_specs", "<i4")])
_HEADER = struct.Struct("<8sI32sQI")


class PoolFormatError(ValueError):
    """A pool file is malformed or fails its integrity check."""


def _metadata(pool: SimPool) -> bytes:
    meta = {
        "config": pool.config.to_dict(),
        "strategy": pool.strategy,
        "seed": pool.seed,
        "dropped": pool.dropped,
    }
    return json.dumps(meta, sort_keys=True).encode()


def save_pool(pool: SimPool, path) -> Path:
    """Write ``pool``; the format follows the suffix (``.csv`` or binary)."""
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p_nohack", "p_hacked", "beta", "n_specs"])
            for e in pool.entries():
                w.writerow([repr(e.p_nohack), repr(e.p_hacked), repr(e.beta_reported), e.n_specs_tried])
        return path
    meta = _metadata(pool)
    rec = np.empty(len(pool), dtype=_RECORD)
    rec["p_nohack"] = pool.p_nohack
    rec["p_hacked"] = pool.p_hacked
    rec["beta"] = pool.beta_reported
    rec["n_specs"] = pool.n_specs_tried
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, hashlib.sha256(meta).digest(), len(pool), len(meta)))
        fh.write(meta)
        fh.write(rec.tobytes())
    return path


def load_pool(path, config: DGPConfig | None = None, strategy: str | None = None) -> SimPool:
    """Read a pool written by :func:`save_pool`.

    CSV files carry no metadata, so ``config`` and ``strategy`` must be given.
    For binary files they are optional and, when given, must match the
    stored metadata.
    """
    path = Path(path)
    if path.suffix == ".csv":
        if config is None or strategy is None:
            raise PoolFormatError("CSV pools need config and strategy")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return SimPool(
            data[:, 0], data[:, 1], data[:, 2], data[:, 3].astype(np.int32), config, strategy, seed=-1
        )
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise PoolFormatError("file too short")
    magic, version, digest, count, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise PoolFormatError("bad magic")
    if version != VERSION:
        raise PoolFormatError(f"unsupported version {version}")
    meta = raw[_HEADER.size : _HEADER.size + mlen]
    if hashlib.sha256(meta).digest() != digest:
        raise PoolFormatError("metadata digest mismatch")
    body = raw[_HEADER.size + mlen :]
    if len(body) != count * _RECORD.itemsize:
        raise PoolFormatError("record count does not match file size")
    rec = np.frombuffer(body, dtype=_RECORD)
    info = json.loads(meta)
    if config is not None and config.to_dict() != info["config"]:
        raise PoolFormatError("pool was simulated under a different configuration")
    if strategy is not None and resolve_strategy(config.scenario if config else info["config"]["scenario"],
                                                 strategy) != info["strategy"]:
        raise PoolFormatError(f"pool was simulated with strategy {info['strategy']!r}")
    return SimPool(
        rec["p_nohack"].copy(),
        rec["p_hacked"].copy(),
        rec["beta"].copy(),
        rec["n_specs"].copy(),
        DGPConfig.from_dict(info["config"]),
        info["strategy"],
        info["seed"],
        info["dropped"],
    )
