"""Command line interface.

Exit status is 0 on success, 2 on invalid configuration or arguments and 3
when a power study exceeds its numerical failure budget. Output files go to
``--output-dir``, else to ``$PHACK_OUTPUT_DIR``, else to the working
directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .battery import TEST_NAMES, BatterySettings, HistogramSpec, run_battery
from .bias_size import distortion_report
from .config import ConfigError, load_config
from .dgp import DGPConfig, save_pool, simulate_pool
from .harness import NumericalBudgetExceeded, run_power_study
from .numkit import EffectDistribution
from .pcurve import PCurveModel, build_rhohat_law, export_curves_csv

__all__ = ["main", "build_parser", "ENV_OUTPUT_DIR"]

ENV_OUTPUT_DIR = "PHACK_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("phackpower")


def _output_dir(arg: str | None, fallback: str | None = None) -> Path:
    d = Path(arg or fallback or os.environ.get(ENV_OUTPUT_DIR) or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _pair(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected two comma-separated numbers") from exc
    return lo, hi


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phackpower", description="p-curves, test battery and power studies")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate-pool", help="simulate studies and save their p-values")
    sp.add_argument("--scenario", required=True, choices=("covariate", "iv", "lag", "cluster"))
    sp.add_argument("--strategy", default="threshold", help="threshold, threshold_s2g or minimum")
    sp.add_argument("--reps", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--N", type=int, default=200)
    sp.add_argument("--K", type=int, default=3)
    sp.add_argument("--h", type=float, default=0.0, help="point-mass effect")
    sp.add_argument("--sided", choices=("one", "two"), default="two")
    sp.add_argument("--f-screen", type=float, default=None)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", default=None, help="file name; .csv for text, anything else for binary")
    sp.add_argument("--output-dir", default=None)

    pw = sub.add_parser("power", help="run a power study from a configuration file")
    pw.add_argument("config")
    pw.add_argument("--output-dir", default=None)
    pw.add_argument("--workers", type=int, default=1)
    pw.add_argument("--plot", action="store_true", help="also write an SVG power curve")

    ac = sub.add_parser("analytic-curves", help="write closed-form p-curves to CSV")
    ac.add_argument("--scenario", required=True, choices=("covariate", "iv", "dataset", "variance"))
    ac.add_argument("--strategy", nargs="+", default=["nohack", "threshold", "minimum"])
    ac.add_argument("--h", type=_floats, default=[0.0, 1.0, 2.0], help="comma-separated effects")
    ac.add_argument("--alpha", type=float, default=0.05)
    ac.add_argument("--rho", type=float, default=0.5)
    ac.add_argument("--K", type=int, default=2)
    ac.add_argument("--kappa", type=float, default=0.5)
    ac.add_argument("--N", type=int, default=200)
    ac.add_argument("--step", type=float, default=0.001)
    ac.add_argument("--out", default=None)
    ac.add_argument("--output-dir", default=None)

    sb = sub.add_parser("size-bias", help="size and bias under specification search")
    sb.add_argument("--scenario", nargs="+", default=["covariate", "iv", "variance"],
                    choices=("covariate", "iv", "dataset", "variance"))
    sb.add_argument("--strategy", nargs="+", default=["threshold", "minimum"])
    sb.add_argument("--h", type=_floats, default=[0.0])
    sb.add_argument("--alpha", type=float, default=0.05)
    sb.add_argument("--rho", type=float, default=0.5)
    sb.add_argument("--gamma", type=float, default=1.0)
    sb.add_argument("--kappa", type=float, default=0.5)
    sb.add_argument("--N", type=int, default=200)
    sb.add_argument("--out", default=None)
    sb.add_argument("--output-dir", default=None)

    ts = sub.add_parser("test", help="apply the test battery to p-values in a one-column CSV")
    ts.add_argument("input", help="CSV with one column of p-values; a non-numeric header is skipped")
    ts.add_argument("--tests", default=",".join(TEST_NAMES), help="comma-separated test names")
    ts.add_argument("--window", type=_pair, default=(0.0, 0.15))
    ts.add_argument("--level", type=float, default=0.05)
    ts.add_argument("--cutoff", type=float, default=0.05)
    ts.add_argument("--bins", type=int, default=15)
    ts.add_argument("--sided", choices=("one", "two"), default="two")
    ts.add_argument("--binomial-bins", type=_floats, default=None, help="a,b,c,d for [a,b) and [c,d]")
    ts.add_argument("--scope", choices=("window", "total"), default="total",
                    help="Cox-Shi proportions relative to the window or to the whole sample")
    ts.add_argument("--cs-variance", choices=("restricted", "plugin"), default="restricted")
    ts.add_argument("--out", default=None, help="CSV path; stdout if omitted")
    ts.add_argument("--diagnostics", default=None, help="JSON-lines path; stderr if omitted")
    return p


def _cmd_simulate_pool(a) -> int:
    cfg = DGPConfig(a.scenario, N=a.N, K=a.K, effect=EffectDistribution.point_mass(a.h), sided=a.sided,
                    f_screen=a.f_screen)
    pool = simulate_pool(cfg, a.strategy, a.reps, seed=a.seed, workers=a.workers)
    name = a.out or f"pool_{a.scenario}_{pool.strategy}_h{a.h:g}_seed{a.seed}.bin"
    path = save_pool(pool, _output_dir(a.output_dir) / name)
    print(path)
    return EXIT_OK


def _cmd_power(a) -> int:
    cfg = load_config(a.config)
    out = _output_dir(a.output_dir, cfg.output_dir)
    try:
        table = run_power_study(cfg, workers=a.workers)
        code = EXIT_OK
    except NumericalBudgetExceeded as exc:
        log.error("%s", exc)
        table, code = exc.table, EXIT_NUMERIC
    path = table.to_csv(out / f"{cfg.stem}.csv")
    print(path)
    if a.plot:
        from .plot import emit_power_plot

        print(emit_power_plot(table, out / f"{cfg.stem}.svg", title=cfg.stem))
    return code


def _cmd_analytic(a) -> int:
    law = build_rhohat_law(a.N) if a.scenario == "variance" else None
    models = [
        PCurveModel(a.scenario, s, alpha=a.alpha, rho=a.rho, K=a.K, kappa=a.kappa, N=a.N,
                    effect=EffectDistribution.point_mass(h))
        for s in a.strategy
        for h in a.h
    ]
    name = a.out or f"curves_{a.scenario}.csv"
    path = _output_dir(a.output_dir) / name
    export_curves_csv(path, models, a.step, law)
    print(path)
    return EXIT_OK


def _cmd_size_bias(a) -> int:
    law = build_rhohat_law(a.N) if "variance" in a.scenario else None
    rows = [
        distortion_report(sc, st, a.alpha, h, a.rho, a.gamma, a.kappa, a.N, law).as_row()
        for sc in a.scenario
        for st in a.strategy
        for h in a.h
    ]
    path = _output_dir(a.output_dir) / (a.out or "size_bias.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(path)
    return EXIT_OK


def _read_pvalues(path: str) -> np.ndarray:
    vals = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not row[0].strip():
                continue
            try:
                vals.append(float(row[0]))
            except ValueError:
                if i == 0:
                    continue
                raise ConfigError(f"{path}: non-numeric value {row[0]!r}", i + 1) from None
    p = np.asarray(vals)
    if np.any((p < 0) | (p > 1)):
        raise ConfigError(f"{path}: p-values must lie in [0, 1]")
    return p


def _cmd_test(a) -> int:
    p = _read_pvalues(a.input)
    tests = tuple(t.strip() for t in a.tests.split(",") if t.strip())
    bad = set(tests) - set(TEST_NAMES)
    if bad:
        raise ConfigError(f"unknown tests {sorted(bad)}; choose from {TEST_NAMES}")
    kwargs = {}
    if a.binomial_bins is not None:
        if len(a.binomial_bins) != 4:
            raise ConfigError("--binomial-bins needs four numbers")
        b = a.binomial_bins
        kwargs["binomial_bins"] = ((b[0], b[1]), (b[2], b[3]))
    settings = BatterySettings(HistogramSpec(a.window[0], a.window[1], a.bins), a.level, a.sided, a.cutoff,
                              cs_variance=a.cs_variance, cs_scope=a.scope, **kwargs)
    results = run_battery(p, tests, settings)
    fh = open(a.out, "w", newline="") if a.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=list(results[0].as_row()), lineterminator="\n")
        w.writeheader()
        for r in results:
            w.writerow(r.as_row())
    finally:
        if a.out:
            fh.close()
    diag = open(a.diagnostics, "w") if a.diagnostics else sys.stderr
    try:
        for r in results:
            diag.write(json.dumps({"test": r.name, "flags": list(r.flags), **r.meta}, default=float) + "\n")
    finally:
        if a.diagnostics:
            diag.close()
    return EXIT_OK


_COMMANDS = {
    "simulate-pool": _cmd_simulate_pool,
    "power": _cmd_power,
    "analytic-curves": _cmd_analytic,
    "size-bias": _cmd_size_bias,
    "test": _cmd_test,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
