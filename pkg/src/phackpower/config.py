"""Power-study configuration files.

A configuration is a YAML mapping with the keys below. Only ``dgp.scenario``
and ``strategy`` are required; everything else has a default. Unknown keys
and type errors are reported with their line number. :func:`save_config`
writes the canonical form, which :func:`load_config` reads back to an equal
object, so a canonical file survives a load/save cycle byte for byte.

.. code-block:: yaml

    dgp:                  # DGPConfig fields
      scenario: covariate # covariate | iv | lag | cluster
      N: 200
      K: 3
      effect: {kind: point_mass, h0: 0.0}
      sided: two
    strategy: threshold   # threshold | threshold_s2g | minimum
    tau_grid: [0.0, 0.5, 1.0]
    selection: {kind: none, cutoff: 0.05, insignif_prob: 0.1, decay: 8.45}
    n: 5000               # p-values drawn per replication before selection
    mc_reps: 500
    pool_reps: 100000     # simulated studies per pool, 0 means pool_path
    pool_path: null       # optional saved pool
    tests: [binomial, fisher, lcm, CS1, CSUB, CS2B, discontinuity]
    battery:
      lower: 0.0
      upper: 0.15
      bins: 15
      sided: two
      cutoff: 0.05
      binomial_bins: [[0.04, 0.045], [0.045, 0.05]]
      lcm_reps: 10000
      lcm_seed: 20240101
      cs_variance: restricted
      cs_scope: total
    level: 0.05
    seed: 0
    max_failure_rate: 0.5 # tolerated share of numerically failed test runs
    output_dir: null
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import yaml

from .battery import TEST_NAMES, BatterySettings, HistogramSpec
from .dgp import DGPConfig, resolve_strategy
from .numkit import EffectDistribution
from .pubbias import SelectionRule

__all__ = ["ConfigError", "PowerStudyConfig", "load_config", "save_config", "config_to_dict", "config_from_dict"]


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


def _default_tau_grid() -> tuple[float, ...]:
    return tuple(round(0.1 * i, 10) for i in range(11))


@dataclass(frozen=True)
class PowerStudyConfig:
    """Everything needed to reproduce one power curve.

    Attributes
    ----------
    dgp : DGPConfig
    strategy : str
    tau_grid : tuple of float
        Fractions of studies drawn from the searched pool.
    selection : SelectionRule
    n : int
        Studies drawn per replication before publication selection.
    mc_reps : int
    pool_reps : int
        Size of the simulated pool; ``0`` requires ``pool_path``.
    pool_path : str, optional
    tests : tuple of str
    battery : BatterySettings
        Its ``level`` is overridden by ``level``.
    level : float
    seed : int
    max_failure_rate : float
        Share of replications in which a test may fail numerically before
        the run is reported as failed.
    output_dir : str, optional
    """

    dgp: DGPConfig
    strategy: str
    tau_grid: tuple[float, ...] = field(default_factory=_default_tau_grid)
    selection: SelectionRule = field(default_factory=SelectionRule)
    n: int = 5000
    mc_reps: int = 500
    pool_reps: int = 100_000
    pool_path: Optional[str] = None
    tests: tuple[str, ...] = TEST_NAMES
    battery: BatterySettings = field(default_factory=BatterySettings)
    level: float = 0.05
    seed: int = 0
    max_failure_rate: float = 0.5
    output_dir: Optional[str] = None

    def __post_init__(self):
        resolve_strategy(self.dgp.scenario, self.strategy)
        if not self.tau_grid or any(not (0.0 <= t <= 1.0) for t in self.tau_grid):
            raise ValueError("tau_grid must be a non-empty list inside [0, 1]")
        if self.mc_reps < 1 or self.n < 1:
            raise ValueError("mc_reps and n must be positive")
        if self.pool_reps < 0:
            raise ValueError("pool_reps must be non-negative")
        if self.pool_reps == 0 and not self.pool_path:
            raise ValueError("pool_reps is 0 and no pool_path is given")
        unknown = set(self.tests) - set(TEST_NAMES)
        if unknown or not self.tests:
            raise ValueError(f"tests must be a non-empty subset of {TEST_NAMES}")
        if not (0.0 < self.level < 1.0):
            raise ValueError("level must lie in (0, 1)")
        if not (0.0 <= self.max_failure_rate <= 1.0):
            raise ValueError("max_failure_rate must lie in [0, 1]")
        if self.battery.level != self.level:
            object.__setattr__(self, "battery", replace(self.battery, level=self.level))

    @property
    def h_label(self) -> str:
        e = self.dgp.effect
        if e.kind == "point_mass":
            return f"h{e.h0:g}"
        if e.kind == "gamma":
            return f"gamma{e.shape:g}-{e.rate:g}"
        return "hemp"

    @property
    def stem(self) -> str:
        """File stem identifying the DGP, strategy, effect and selection rule."""
        f = f"-F{self.dgp.f_screen:g}" if self.dgp.f_screen is not None else ""
        return (
            f"power_{self.dgp.scenario}{f}_K{self.dgp.K}_{self.dgp.sided}_"
            f"{resolve_strategy(self.dgp.scenario, self.strategy)}_{self.h_label}_{self.selection.kind}"
        )


# ---------------------------------------------------------------------------
# dict conversion

_TOP = (
    "dgp", "strategy", "tau_grid", "selection", "n", "mc_reps", "pool_reps", "pool_path",
    "tests", "battery", "level", "seed", "max_failure_rate", "output_dir",
)
_DGP = tuple(DGPConfig("covariate").to_dict())
_SELECTION = ("kind", "cutoff", "insignif_prob", "decay")
_BATTERY = ("lower", "upper", "bins", "sided", "cutoff", "binomial_bins", "lcm_reps", "lcm_seed", "cs_variance", "cs_scope")
_EFFECT = {"point_mass": ("kind", "h0"), "gamma": ("kind", "shape", "rate"), "empirical": ("kind", "sample")}


def _battery_dict(b: BatterySettings) -> dict:
    return {
        "lower": b.spec.lower,
        "upper": b.spec.upper,
        "bins": b.spec.J,
        "sided": b.sided,
        "cutoff": b.cutoff,
        "binomial_bins": [list(b.binomial_bins[0]), list(b.binomial_bins[1])],
        "lcm_reps": b.lcm_reps,
        "lcm_seed": b.lcm_seed,
        "cs_variance": b.cs_variance,
        "cs_scope": b.cs_scope,
    }


def config_to_dict(cfg: PowerStudyConfig) -> dict:
    """Canonical plain-data form with every key present."""
    return {
        "dgp": cfg.dgp.to_dict(),
        "strategy": cfg.strategy,
        "tau_grid": list(cfg.tau_grid),
        "selection": cfg.selection.to_dict(),
        "n": cfg.n,
        "mc_reps": cfg.mc_reps,
        "pool_reps": cfg.pool_reps,
        "pool_path": cfg.pool_path,
        "tests": list(cfg.tests),
        "battery": _battery_dict(cfg.battery),
        "level": cfg.level,
        "seed": cfg.seed,
        "max_failure_rate": cfg.max_failure_rate,
        "output_dir": cfg.output_dir,
    }


def config_from_dict(d: dict, lines: dict | None = None) -> PowerStudyConfig:
    """Build a config from plain data. ``lines`` maps dotted key paths to line
    numbers for error messages."""
    lines = lines or {}

    def fail(msg, key):
        raise ConfigError(msg, lines.get(key), key)

    def mapping(obj, key, allowed):
        if not isinstance(obj, dict):
            fail(f"{key or 'document'} must be a mapping", key)
        for k in obj:
            if k not in allowed:
                path = f"{key}.{k}" if key else str(k)
                fail(f"unknown key {path!r}", path)
        return obj

    mapping(d, "", _TOP)
    for req in ("dgp", "strategy"):
        if req not in d:
            raise ConfigError(f"missing required field {req!r}", None, req)
    dgp = dict(mapping(d["dgp"], "dgp", _DGP))
    if "scenario" not in dgp:
        raise ConfigError("missing required field 'dgp.scenario'", lines.get("dgp"), "dgp.scenario")
    if "effect" in dgp:
        eff = mapping(dgp["effect"], "dgp.effect", ("kind", "h0", "shape", "rate", "sample"))
        if eff.get("kind") not in _EFFECT:
            fail(f"effect kind must be one of {tuple(_EFFECT)}", "dgp.effect.kind")
        mapping(eff, "dgp.effect", _EFFECT[eff["kind"]])
    else:
        dgp["effect"] = EffectDistribution.point_mass(0.0).to_dict()
    sel = mapping(d.get("selection", {}), "selection", _SELECTION)
    bat = mapping(d.get("battery", {}), "battery", _BATTERY)

    def typed(obj, key, kind, path):
        if key not in obj:
            return
        v = obj[key]
        ok = {
            "int": isinstance(v, int) and not isinstance(v, bool),
            "float": isinstance(v, (int, float)) and not isinstance(v, bool),
            "str": isinstance(v, str),
            "bool": isinstance(v, bool),
        }[kind]
        if not ok and not (v is None and path in _NULLABLE):
            fail(f"{path} must be of type {kind}", path)

    for key, kind in (("n", "int"), ("mc_reps", "int"), ("pool_reps", "int"), ("seed", "int"),
                      ("level", "float"), ("max_failure_rate", "float"), ("strategy", "str"),
                      ("pool_path", "str"), ("output_dir", "str")):
        typed(d, key, kind, key)
    for key, kind in (("scenario", "str"), ("N", "int"), ("K", "int"), ("sided", "str"), ("alpha", "float"),
                      ("endog_cov", "float"), ("beta_scale", "float"), ("f_screen", "float"),
                      ("max_lags", "int"), ("extra_lags", "int"), ("redraw_design", "bool")):
        typed(dgp, key, kind, f"dgp.{key}")
    for key, kind in (("kind", "str"), ("cutoff", "float"), ("insignif_prob", "float"), ("decay", "float")):
        typed(sel, key, kind, f"selection.{key}")
    for key, kind in (("lower", "float"), ("upper", "float"), ("bins", "int"), ("sided", "str"),
                      ("cutoff", "float"), ("lcm_reps", "int"), ("lcm_seed", "int"), ("cs_variance", "str"),
                      ("cs_scope", "str")):
        typed(bat, key, kind, f"battery.{key}")

    try:
        dgp_cfg = DGPConfig.from_dict(dgp)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"dgp: {exc}", lines.get("dgp"), "dgp") from exc
    try:
        rule = SelectionRule(**{k: sel[k] for k in sel})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"selection: {exc}", lines.get("selection"), "selection") from exc
    try:
        spec = HistogramSpec(float(bat.get("lower", 0.0)), float(bat.get("upper", 0.15)), int(bat.get("bins", 15)))
        kwargs = {k: bat[k] for k in ("sided", "cutoff", "lcm_reps", "lcm_seed", "cs_variance", "cs_scope")
                  if k in bat}
        if "binomial_bins" in bat:
            lo, hi = bat["binomial_bins"]
            kwargs["binomial_bins"] = (tuple(map(float, lo)), tuple(map(float, hi)))
        battery = BatterySettings(spec=spec, level=float(d.get("level", 0.05)), **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"battery: {exc}", lines.get("battery"), "battery") from exc

    top = {k: d[k] for k in ("strategy", "n", "mc_reps", "pool_reps", "pool_path", "level", "seed",
                             "max_failure_rate", "output_dir") if k in d}
    if "tau_grid" in d:
        if not isinstance(d["tau_grid"], list):
            fail("tau_grid must be a list", "tau_grid")
        top["tau_grid"] = tuple(float(t) for t in d["tau_grid"])
    if "tests" in d:
        if not isinstance(d["tests"], list):
            fail("tests must be a list", "tests")
        top["tests"] = tuple(d["tests"])
    for key in ("level", "max_failure_rate"):
        if key in top:
            top[key] = float(top[key])
    try:
        return PowerStudyConfig(dgp=dgp_cfg, selection=rule, battery=battery, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


_NULLABLE = {"pool_path", "output_dir", "dgp.beta_scale", "dgp.f_screen"}


# ---------------------------------------------------------------------------
# files


def _line_map(node, prefix: str = "", out: dict | None = None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _line_map(v, path, out)
    return out


def loads_config(text: str) -> PowerStudyConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {exc}", mark.line + 1 if mark else None) from exc
    if data is None:
        raise ConfigError("empty configuration", 1)
    return config_from_dict(data, _line_map(node))


def load_config(path) -> PowerStudyConfig:
    """Read a configuration file."""
    return loads_config(Path(path).read_text())


def dumps_config(cfg: PowerStudyConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None, width=100)


def save_config(cfg: PowerStudyConfig, path) -> Path:
    """Write the canonical form of ``cfg``."""
    path = Path(path)
    path.write_text(dumps_config(cfg))
    return path
