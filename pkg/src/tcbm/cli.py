"""Batch front end: TOML experiment configs in, CSV/JSON artifacts out.

One experiment per invocation.  Every run writes ``results.csv``,
``summary.json`` and ``manifest.json`` into the output directory; the exit
code is 0 when all acceptance bands of the experiment pass, 1 on a numerical
failure, 2 on a configuration error.

Config keys are flat TOML; CLI flags override config keys one-for-one.
Per-path results are keyed by path index and reduced in index order in the
main process, so output does not depend on the worker count.  ``--serial``
runs everything in-process for bit-reproducible debugging.

Recognized keys (defaults in DEFAULTS):
  seed            master seed, required; no wall-clock fallback
  paths           number of Monte Carlo paths
  dt              original-clock grid step
  out             output directory
  experiment_id   free-form label copied into the CSV
  horizon, range_end, drift_slope, jump_count, poisson_rate,
  jump_size_dist, jump_size_mean, jump_size_low, jump_size_high,
  min_jump_gap    time-change sampler parameters
  t               evaluation horizon for identity checks (default: horizon)
  grid            observation times (simulate, martingale-test)
  formula         forward | backward | jacod_i | jacod_ii
  case            integrand / process name for the chosen formula
  tolerance       optional rms bound for verify-cov (exact cases: 1e-12)
  enforce_adapted set false to bypass the adaptedness gate (power checks)
  deltas          grid steps for convergence (>= 4 levels)
  slope_min       convergence pass threshold on the fitted slope
  x, p, s0        market parameters
  theta_kind      constant | gamma_affine;  theta_const / theta_a, theta_b
  battery         run the dominance battery in optimize (default true)
  drift           deterministic trend added to M (martingale power checks)
"""

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from . import __version__
from . import montecarlo as mc
from . import rng as _rng
from .errors import ConfigError, NumericalFailure, TcbmError
from .montecarlo import (convergence_study, fit_loglog_slope, martingale_rows,
                         sample_driver_at)
from .noise import BrownianPath
from .portfolio import (PERTURBATION_BATTERY, LOG_UTILITY, MarketSpec,
                        ThetaFamily, build_market_paths, make_strategy,
                        utility, value_closed_form_log,
                        value_closed_form_power, wealth_process)
from .stochint import integrand_by_name, r_process_by_name
from .timechange import TimeChangeConfig, sample_timechange

DEFAULTS = {
    "paths": 1000,
    "dt": 1.0 / 256,
    "out": "out",
    "experiment_id": "",
    "horizon": 1.0,
    "range_end": 8.0,
    "drift_slope": 1.0,
    "jump_size_dist": "exponential",
    "jump_size_mean": 0.25,
    "jump_size_low": 0.1,
    "jump_size_high": 0.5,
    "min_jump_gap": 0.02,
    "formula": "forward",
    "case": "constant",
    "enforce_adapted": True,
    "deltas": [2.0 ** -k for k in range(5, 10)],
    "slope_min": 0.4,
    "x": 1.0,
    "p": 2.0,
    "s0": 1.0,
    "theta_kind": "constant",
    "theta_const": 1.0,
    "theta_a": 1.0,
    "theta_b": 0.0,
    "battery": True,
    "drift": 0.0,
    "serial": False,
}


# ----------------------------------------------------------------------
# config handling
# ----------------------------------------------------------------------

def load_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config is not None:
        try:
            with open(args.config, "rb") as fh:
                cfg.update(tomllib.load(fh))
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {args.config}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config: invalid TOML: {exc}")
    for key in ("seed", "paths", "dt", "out", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if args.serial:
        cfg["serial"] = True
    if "seed" not in cfg:
        raise ConfigError("seed: required (set in the config or pass --seed)")
    cfg["seed"] = int(cfg["seed"])
    cfg["paths"] = int(cfg["paths"])
    if cfg["paths"] < 1:
        raise ConfigError(f"paths: must be >= 1, got {cfg['paths']}")
    if "t" not in cfg:
        cfg["t"] = cfg["horizon"]
    if "grid" not in cfg:
        h = float(cfg["horizon"])
        cfg["grid"] = [h / 4, h / 2, 3 * h / 4, h]
    return cfg


def tc_config_from(cfg: dict) -> TimeChangeConfig:
    tc = TimeChangeConfig(
        horizon=float(cfg["horizon"]),
        range_end=float(cfg["range_end"]),
        drift_slope=float(cfg["drift_slope"]),
        jump_count=(int(cfg["jump_count"]) if "jump_count" in cfg else None),
        poisson_rate=(float(cfg["poisson_rate"]) if "poisson_rate" in cfg else None),
        jump_size_dist=str(cfg["jump_size_dist"]),
        jump_size_mean=float(cfg["jump_size_mean"]),
        jump_size_low=float(cfg["jump_size_low"]),
        jump_size_high=float(cfg["jump_size_high"]),
        min_jump_gap=float(cfg["min_jump_gap"]),
    )
    tc.validate()
    return tc


def theta_from(cfg: dict) -> ThetaFamily:
    kind = cfg["theta_kind"]
    if kind == "constant":
        return ThetaFamily.constant(float(cfg["theta_const"]))
    if kind == "gamma_affine":
        a = float(cfg["theta_a"])
        b = float(cfg["theta_b"])
        horizon = float(cfg["horizon"])
        return ThetaFamily.of_gamma(lambda g: a + b * g,
                                    sup_abs=abs(a) + abs(b) * horizon)
    raise ConfigError(f"theta_kind: unknown kind {kind!r}")


def market_spec_from(cfg: dict) -> MarketSpec:
    spec = MarketSpec(x=float(cfg["x"]), p=float(cfg["p"]), s0=float(cfg["s0"]),
                      horizon=float(cfg["horizon"]), theta=theta_from(cfg),
                      tc_config=tc_config_from(cfg), dt=float(cfg["dt"]))
    try:
        spec.validate()
    except (ValueError, TcbmError) as exc:
        raise ConfigError(f"market: {exc}")
    return spec


# ----------------------------------------------------------------------
# per-path workers (top-level so they pickle; payload is a plain dict)
# ----------------------------------------------------------------------

def _path_simulate(payload, i):
    cfg = payload
    tc = tc_config_from(cfg)
    lam = sample_timechange(tc, cfg["seed"], i)
    w = BrownianPath(tc.range_end, rng=_rng.stream(cfg["seed"], i, _rng.STREAM_W))
    grid = np.asarray(cfg["grid"], dtype=float)
    images = lam.eval(grid)
    w.refine(images)
    m = w.value_at(images)
    return (float(lam.final_value), float(m[-1]), len(lam.jumps))


def _verify_pair(cfg, lam, gam, w, w2, dt):
    formula = cfg["formula"]
    case = cfg["case"]
    t = float(cfg["t"])
    return mc._one_pair(formula, case, lam, gam, w, w2, t, dt,
                        bool(cfg["enforce_adapted"]))


def _path_verify(payload, i):
    cfg = payload
    tc = tc_config_from(cfg)
    lam = sample_timechange(tc, cfg["seed"], i)
    gam = lam.inverse()
    w = BrownianPath(tc.range_end, rng=_rng.stream(cfg["seed"], i, _rng.STREAM_W))
    w2 = BrownianPath(tc.range_end, rng=_rng.stream(cfg["seed"], i, _rng.STREAM_AUX))
    pair = _verify_pair(cfg, lam, gam, w, w2, float(cfg["dt"]))
    return (pair.lhs, pair.rhs, pair.abs_diff)


def _path_convergence(payload, i):
    cfg = payload
    tc = tc_config_from(cfg)
    lam = sample_timechange(tc, cfg["seed"], i)
    gam = lam.inverse()
    w = BrownianPath(tc.range_end, rng=_rng.stream(cfg["seed"], i, _rng.STREAM_W))
    w2 = BrownianPath(tc.range_end, rng=_rng.stream(cfg["seed"], i, _rng.STREAM_AUX))
    # coarse to fine: each level refines the same Brownian realization
    return tuple(_verify_pair(cfg, lam, gam, w, w2, dt).abs_diff
                 for dt in payload["_deltas"])


def _path_optimize(payload, i):
    cfg = payload
    spec = market_spec_from(cfg)
    paths = build_market_paths(spec, cfg["seed"], i)
    out = {}
    for tag in payload["_tags"]:
        strat = make_strategy(tag, spec, paths)
        v, admissible = wealth_process(spec.x, strat, paths)
        out[tag] = float(utility(v[-1], spec.p)) if admissible and v[-1] > 0 else None
    if spec.p == LOG_UTILITY:
        out["closed_form"] = value_closed_form_log(spec, paths)
    else:
        out["closed_form"] = value_closed_form_power(spec, paths)
    return out


def _path_martingale(payload, i):
    cfg = payload
    tc = tc_config_from(cfg)
    grid = np.asarray(cfg["grid"], dtype=float)
    m, lam = sample_driver_at(tc, grid, cfg["seed"], i, float(cfg["drift"]))
    return (tuple(m), tuple(lam))


_PATH_FNS = {
    "simulate": _path_simulate,
    "verify": _path_verify,
    "convergence": _path_convergence,
    "optimize": _path_optimize,
    "martingale": _path_martingale,
}


def _run_chunk(task):
    name, payload, indices = task
    fn = _PATH_FNS[name]
    return [fn(payload, i) for i in indices]


def map_paths(name, payload, n_paths, workers):
    """Per-path results in path-index order, identical for any worker count."""
    if workers <= 1 or n_paths < 2 * workers:
        return _run_chunk((name, payload, range(n_paths)))
    chunk = max(1, (n_paths + 4 * workers - 1) // (4 * workers))
    tasks = [(name, payload, range(a, min(a + chunk, n_paths)))
             for a in range(0, n_paths, chunk)]
    out = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_run_chunk, tasks):
            out.extend(part)
    return out


def _mean_se(xs):
    xs = np.asarray(xs, dtype=float)
    mean = float(xs.mean())
    se = float(xs.std(ddof=1) / np.sqrt(xs.size)) if xs.size > 1 else 0.0
    return mean, se


# ----------------------------------------------------------------------
# experiments
# ----------------------------------------------------------------------

def run_simulate(cfg, workers):
    rows = [(cfg["experiment_id"], i, *res)
            for i, res in enumerate(map_paths("simulate", cfg, cfg["paths"], workers))]
    lam_end = [r[2] for r in rows]
    m_end = [r[3] for r in rows]
    lmean, lse = _mean_se(lam_end)
    mmean, mse = _mean_se(m_end)
    summary = {"n_paths": cfg["paths"], "lam_end_mean": lmean,
               "lam_end_stderr": lse, "m_end_mean": mmean, "m_end_stderr": mse,
               "expected_lam_end": tc_config_from(cfg).mean_final_value,
               "passed": True}
    header = ["experiment_id", "path", "lam_end", "m_end", "n_jumps"]
    return header, rows, summary


def run_verify(cfg, workers):
    res = map_paths("verify", cfg, cfg["paths"], workers)
    rows = [(cfg["experiment_id"], cfg["formula"], cfg["case"], cfg["dt"],
             i, lhs, rhs, diff) for i, (lhs, rhs, diff) in enumerate(res)]
    diffs = np.array([r[-1] for r in rows])
    rms = float(np.sqrt(np.mean(diffs ** 2)))
    tol = cfg.get("tolerance")
    if tol is None and cfg["case"] == "constant":
        tol = 1e-12
    passed = True if tol is None else rms <= float(tol)
    summary = {"formula": cfg["formula"], "case": cfg["case"], "dt": cfg["dt"],
               "n_paths": cfg["paths"], "rms": rms,
               "max_abs": float(diffs.max()), "tolerance": tol, "passed": passed}
    header = ["experiment_id", "formula", "case", "dt", "path", "lhs", "rhs",
              "abs_diff"]
    return header, rows, summary


def run_convergence(cfg, workers):
    deltas = sorted(set(float(d) for d in cfg["deltas"]), reverse=True)
    if len(deltas) < 4:
        raise ConfigError(f"deltas: need >= 4 levels, got {len(deltas)}")
    payload = dict(cfg)
    payload["_deltas"] = deltas
    res = np.asarray(map_paths("convergence", payload, cfg["paths"], workers))
    rms = np.sqrt(np.mean(res ** 2, axis=0))
    mx = res.max(axis=0)
    exact = bool(np.all(rms <= mc.EXACT_RMS))
    slope, intercept = (None, None) if exact else fit_loglog_slope(deltas, rms)
    passed = exact or (slope is not None and slope >= float(cfg["slope_min"]))
    rows = [(cfg["experiment_id"], cfg["formula"], cfg["case"], d,
             cfg["paths"], float(r), float(m), cfg["seed"])
            for d, r, m in zip(deltas, rms, mx)]
    summary = {"formula": cfg["formula"], "case": cfg["case"],
               "deltas": deltas, "rms": [float(r) for r in rms],
               "max_abs": [float(m) for m in mx], "slope": slope,
               "intercept": intercept, "exact": exact,
               "slope_min": cfg["slope_min"], "passed": passed}
    header = ["experiment_id", "formula", "case", "dt", "n_paths", "rms",
              "max_abs", "seed"]
    return header, rows, summary


def run_optimize(cfg, workers):
    spec = market_spec_from(cfg)  # fail fast on config errors
    tags = ["optimal"] + (list(PERTURBATION_BATTERY) if cfg["battery"] else [])
    payload = dict(cfg)
    payload["_tags"] = tags
    res = map_paths("optimize", payload, cfg["paths"], workers)

    cf = np.array([r["closed_form"] for r in res])
    cf_mean, cf_se = _mean_se(cf)
    rows = []
    summary = {"p": spec.p, "n_paths": cfg["paths"], "closed_form": cf_mean,
               "closed_form_stderr": cf_se, "strategies": {}}
    passed = True
    for tag in tags:
        us = np.array([r[tag] for r in res if r[tag] is not None], dtype=float)
        n_bad = sum(1 for r in res if r[tag] is None)
        mean, se = _mean_se(us)
        entry = {"mc_value": mean, "stderr": se, "n": int(us.size),
                 "n_inadmissible": n_bad}
        if tag == "optimal":
            if n_bad > 1e-3 * cfg["paths"]:
                passed = False
            # paired difference against the per-path closed form
            d = np.array([r[tag] - r["closed_form"] for r in res
                          if r[tag] is not None])
            dmean, dse = _mean_se(d)
            entry["gap_vs_closed_form"] = dmean
            entry["gap_stderr"] = dse
            entry["matches_closed_form"] = bool(abs(dmean) <= 3.0 * max(dse, 1e-15))
            passed = passed and entry["matches_closed_form"]
        else:
            d = np.array([r[tag] - r["optimal"] for r in res
                          if r[tag] is not None and r["optimal"] is not None])
            dmean, dse = _mean_se(d)
            entry["diff_vs_optimal"] = dmean
            entry["diff_stderr"] = dse
            entry["dominated"] = bool(dmean <= 3.0 * max(dse, 1e-15))
            passed = passed and entry["dominated"]
        summary["strategies"][tag] = entry
        rows.append((cfg["experiment_id"], tag, spec.p, cfg["paths"], cfg["dt"],
                     mean, se, cf_mean, abs(mean - cf_mean)))
    summary["passed"] = passed
    header = ["experiment_id", "strategy_tag", "p", "n_paths", "dt",
              "mc_value", "stderr", "closed_form_value", "abs_gap"]
    return header, rows, summary


def run_martingale(cfg, workers):
    grid = np.asarray(sorted(set(float(g) for g in cfg["grid"])))
    if grid.size == 0 or grid[0] <= 0:
        raise ConfigError("grid: observation times must be positive")
    payload = dict(cfg)
    payload["grid"] = [float(g) for g in grid]
    res = map_paths("martingale", payload, cfg["paths"], workers)
    m_all = np.array([r[0] for r in res])
    lam_all = np.array([r[1] for r in res])
    mrows = martingale_rows(grid, m_all, lam_all)
    rows = [(cfg["experiment_id"], r.label, r.s, r.t, r.mean, r.stderr,
             int(r.passed)) for r in mrows]

    # terminal variance against the sampler's implied E[Lambda] at the last time
    tc = tc_config_from(cfg)
    t_last = float(grid[-1])
    centered = (m_all[:, -1] - m_all[:, -1].mean()) ** 2
    var = float(centered.mean())
    vse = float(centered.std(ddof=1) / np.sqrt(cfg["paths"]))
    expected = tc.mean_final_value * (t_last / tc.horizon)
    var_ok = bool(abs(var - expected) <= 3.0 * vse)
    rows.append((cfg["experiment_id"], "variance", 0.0, t_last, var, vse,
                 int(var_ok)))
    passed = var_ok and all(r.passed for r in mrows)
    summary = {"n_paths": cfg["paths"], "n_statistics": len(rows),
               "n_failed": sum(1 for r in rows if not r[-1]),
               "variance": var, "variance_expected": expected,
               "variance_stderr": vse, "drift": cfg["drift"], "passed": passed}
    header = ["experiment_id", "statistic", "s", "t", "mean", "stderr", "passed"]
    return header, rows, summary


RUNNERS = {
    "simulate": run_simulate,
    "verify-cov": run_verify,
    "convergence": run_convergence,
    "optimize": run_optimize,
    "martingale-test": run_martingale,
}


# ----------------------------------------------------------------------
# artifacts
# ----------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_artifacts(outdir, header, rows, summary, manifest):
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "results.csv"), "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def make_manifest(command, cfg):
    # the output location is not part of the experiment identity
    resolved = {k: v for k, v in sorted(cfg.items())
                if not k.startswith("_") and k != "out"}
    blob = json.dumps(resolved, sort_keys=True)
    return {"command": command, "version": __version__, "seed": cfg["seed"],
            "serial": bool(cfg["serial"]),
            "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
            "config": resolved}


# ----------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="tcbm",
        description="Simulation and verification experiments for stochastic "
                    "integration under an increasing time-change.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="TOML experiment config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--serial", action="store_true",
                       help="single-process, bit-reproducible run")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: available cores)")
    return parser


def run(args) -> int:
    cfg = load_config(args)
    workers = 1 if cfg["serial"] else int(cfg.get("workers") or os.cpu_count() or 1)
    outdir = str(cfg["out"])
    header, rows, summary = RUNNERS[args.command](cfg, workers)
    write_artifacts(outdir, header, rows, summary,
                    make_manifest(args.command, cfg))
    if not summary.get("passed", True):
        raise NumericalFailure(f"{args.command}: acceptance band failed "
                               f"(see {os.path.join(outdir, 'summary.json')})")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, TcbmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
