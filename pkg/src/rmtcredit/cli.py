"""Command-line interface.

Every subcommand reads its settings from built-in defaults, an optional flat
``key = value`` config file and command-line flags, in increasing order of
precedence. Each run writes its outputs plus ``manifest.json``; passing that
manifest back with ``--manifest`` repeats the run with identical numbers.

Exit codes: 0 success, 2 usage, 3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from .exceptions import NumericalError, ParseError, RMTCreditError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# value types

def _float(s):
    if isinstance(s, (int, float)):
        return float(s)
    v = float(str(s).strip())
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _int(s):
    if isinstance(s, int):
        return s
    f = float(str(s).strip())
    if not f.is_integer():
        raise ValueError(f"{s!r} is not an integer")
    return int(f)


def _size(s):
    """Contract count or ``inf`` for the infinite portfolio."""
    if str(s).strip().lower() in ("inf", "infinity"):
        return "inf"
    return _int(s)


def _bool(s):
    if isinstance(s, bool):
        return s
    t = str(s).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{s!r} is not a boolean")


def _floats(s):
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    return [float(v) for v in str(s).split(",") if v.strip()]


def _str(s):
    return str(s).strip()


def _choice(*options):
    def conv(s):
        s = str(s).strip()
        if s not in options:
            raise ValueError(f"{s!r} not in {{{', '.join(options)}}}")
        return s
    conv.__name__ = "choice"
    return conv


def _range(conv, lo=None, hi=None, lo_open=False, hi_open=False):
    def check(s):
        v = conv(s)
        if v == "inf":
            return v
        if lo is not None and (v < lo or (lo_open and v == lo)):
            raise ValueError(f"{v} below the allowed range")
        if hi is not None and (v > hi or (hi_open and v == hi)):
            raise ValueError(f"{v} above the allowed range")
        return v
    check.__name__ = conv.__name__
    return check


_pos = _range(_float, 0, lo_open=True)
_posint = _range(_int, 1)
_prob = _range(_float, 0, 1 - 1e-6)
_alpha_list = _floats

PORTFOLIO_KEYS = {
    "mu": (_float, 0.17, "drift per time unit"),
    "rho": (_range(_float, 0), 0.35, "volatility per sqrt time unit"),
    "F": (_pos, 75.0, "face value"),
    "V0": (_pos, 100.0, "initial asset value"),
    "T_M": (_pos, 1.0, "maturity in time units"),
    "drift_convention": (_choice("ito", "log"), "ito", "ito: mu is the drift of dV/V; log: of ln V"),
}

SCHEMAS = {
    "synth": {
        "K": (_posint, 10, "number of assets"),
        "T": (_range(_int, 2), 1000, "number of price observations"),
        "c": (_prob, 0.3, "equicorrelation"),
        "rho": (_range(_float, 0), 0.02, "volatility per step"),
        "mu": (_float, 5e-4, "drift per step"),
        "start": (_str, "2000-01-03", "first business day"),
        "seed": (_int, None, "random seed"),
    },
    "estimate": {
        "input": (_str, None, "price CSV (date,asset_id,close)"),
        "delta_t": (_posint, 1, "return horizon in observations"),
        "window": (_range(_int, 0), 0, "sliding window length (0: full sample only)"),
        "stride": (_range(_int, 0), 0, "window stride (0: non-overlapping)"),
        "maturity": (_pos, 1.0, "horizon for volatility scaling"),
    },
    "fit-n": {
        "input": (_str, None, "return CSV, header of asset ids"),
        "covariance": (_choice("window", "global"), "window", "covariance used for aggregation"),
        "window": (_posint, 25, "window length for local covariances"),
        "n_min": (_pos, 1.0, "lower end of the N search range"),
        "n_max": (_pos, 64.0, "upper end of the N search range"),
        "resolution": (_pos, 0.1, "target resolution of N"),
        "grid": (_range(_int, 2), 401, "points of the exported density"),
    },
    "loss-dist": {
        "c": (_prob, 0.28, "effective correlation"),
        "N": (_pos, 6.0, "fluctuation parameter (inf: fixed correlations)"),
        "K": (_range(_size, 1), 100, "contracts, or inf for the limiting density"),
        **PORTFOLIO_KEYS,
        "grid": (_range(_int, 2), 512, "uniform L grid points on [0, 1]"),
        "n_z": (_posint, 64, "Gauss-Laguerre nodes"),
        "alphas": (_alpha_list, [0.99, 0.995, 0.999], "confidence levels"),
    },
    "var": {
        "trials": (_posint, 100_000, "Monte-Carlo trials"),
        "seed": (_int, None, "random seed"),
        "n_fluct": (_pos, math.inf, "fluctuation parameter N (inf: fixed covariance)"),
        "correlation": (_str, "0.28", "effective correlation or path of a correlation CSV"),
        "K": (_posint, 100, "contracts"),
        **PORTFOLIO_KEYS,
        "block_size": (_posint, 8192, "trials per random substream"),
        "n_jobs": (_int, 1, "worker threads (results do not depend on it)"),
        "alphas": (_alpha_list, [0.99, 0.995, 0.999], "confidence levels"),
        "dump_losses": (_bool, False, "also write losses.csv"),
    },
    "copula": {
        "scenario": (_str, None, "scenario name"),
        "trials": (_posint, 5000, "trials per repetition"),
        "repetitions": (_posint, 1000, "independent repetitions averaged"),
        "seed": (_int, None, "random seed"),
        "B": (_range(_int, 2), 20, "bins per axis"),
        "K": (_posint, 50, "contracts per portfolio"),
        "ties": (_choice("jitter", "mid"), "jitter", "rank treatment of tied losses"),
        "n_jobs": (_int, 1, "worker threads"),
    },
}

REQUIRED = {"synth": ["seed"], "estimate": ["input"], "fit-n": ["input"], "var": ["seed"],
            "copula": ["scenario", "seed"], "loss-dist": []}


# --------------------------------------------------------------------------
# config handling

def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value' in {path}", line=lineno)
            key, value = (t.strip() for t in line.split("=", 1))
            if not key:
                raise ParseError(f"empty key in {path}", line=lineno)
            out[key] = value
    return out


def parse_config(command, flags=None, file_values=None):
    """Resolve settings: flag > config file > default.

    Raises
    ------
    UsageError
        Unknown key, value of the wrong type or range, or missing required
        setting; the message names the key.
    """
    schema = SCHEMAS[command]
    resolved = {k: d for k, (_, d, _) in schema.items()}
    for source in (file_values or {}, {k: v for k, v in (flags or {}).items() if v is not None}):
        for key, value in source.items():
            if key not in schema:
                raise UsageError(f"unknown key '{key}' for {command}")
            try:
                resolved[key] = schema[key][0](value)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"invalid value for '{key}': {exc}") from None
    for key in REQUIRED[command]:
        if resolved.get(key) is None:
            raise UsageError(f"missing required setting '{key}' for {command}")
    return resolved


# --------------------------------------------------------------------------
# serialization (17 significant digits everywhere)

def _fmt(v):
    return f"{v:.17g}"


def _json_value(o, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(o, dict):
        if not o:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_value(v, indent, level + 1)}" for k, v in o.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(o, (list, tuple, np.ndarray)):
        seq = list(o)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_json_value(v, indent, level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _json_value(v, indent, level + 1) for v in seq) + "\n" + end + "]"
    if isinstance(o, (bool, np.bool_)):
        return "true" if o else "false"
    if o is None:
        return "null"
    if isinstance(o, (int, np.integer)):
        return str(int(o))
    if isinstance(o, (float, np.floating)):
        v = float(o)
        if math.isfinite(v):
            return _fmt(v)
        return json.dumps("inf" if v > 0 else "-inf") if math.isinf(v) else "null"
    return json.dumps(str(o))


def dumps(obj):
    """JSON text with floats written to 17 significant digits."""
    return _json_value(obj, 2, 0) + "\n"


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


def write_csv(path, header, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


# --------------------------------------------------------------------------
# subcommands

def _portfolio(cfg, K):
    from .merton import PortfolioSpec

    return PortfolioSpec.homogeneous(K, F=cfg["F"], V0=cfg["V0"], mu=cfg["mu"], rho=cfg["rho"],
                                     maturity=cfg["T_M"], drift_convention=cfg["drift_convention"])


def cmd_synth(cfg, out):
    from .market import compute_returns, generate_synthetic_market, write_prices_csv, write_returns_csv

    series = generate_synthetic_market(cfg["K"], cfg["T"], cfg["c"], cfg["rho"], cfg["mu"], cfg["seed"], cfg["start"])
    write_prices_csv(series, os.path.join(out, "prices.csv"))
    write_returns_csv(compute_returns(series), os.path.join(out, "returns.csv"))
    return ["prices.csv", "returns.csv"]


def cmd_estimate(cfg, out):
    from .market import (CorrelationEstimator, compute_returns, estimate_drift_vol, load_csv,
                         sliding_correlation_ensemble, write_matrix_csv)

    returns = compute_returns(load_csv(cfg["input"]), cfg["delta_t"])
    est = CorrelationEstimator(maturity=cfg["maturity"]).fit(returns.values.T)
    mom = estimate_drift_vol(returns, cfg["maturity"])
    ids = returns.asset_ids
    write_csv(os.path.join(out, "moments.csv"), ["asset_id", "mu", "sigma", "rho"],
              [ids, mom.mu, mom.sigma, mom.rho])
    write_matrix_csv(est.correlation_, ids, os.path.join(out, "correlation.csv"))
    write_matrix_csv(est.covariance_, ids, os.path.join(out, "covariance.csv"))
    summary = {"dim": returns.K, "observations": returns.T, "asset_ids": list(ids),
               "effective_correlation": est.effective_correlation_,
               "correlation": est.correlation_.tolist()}
    files = ["moments.csv", "correlation.csv", "covariance.csv"]
    if cfg["window"] > 0:
        ens = sliding_correlation_ensemble(returns, cfg["window"], cfg["stride"] or None)
        from .market import effective_correlation

        cs = [effective_correlation(C)[0] for C in ens.matrices]
        write_csv(os.path.join(out, "windows.csv"), ["window_start", "effective_correlation"],
                  [ens.window_starts.tolist(), cs])
        summary["windows"] = {"length": ens.window_length, "stride": ens.stride, "count": len(ens),
                              "skipped": [[int(start), str(asset)] for start, asset in ens.skipped]}
        files.append("windows.csv")
    write_json(summary, os.path.join(out, "estimate.json"))
    return files + ["estimate.json"]


def cmd_fit_n(cfg, out):
    from .market import read_returns_csv
    from .wishart import aggregate_returns, fit_N, univariate_aggregated_density

    returns = read_returns_csv(cfg["input"])
    cov = None if cfg["covariance"] == "window" else np.cov(returns.values, bias=True)
    sample = aggregate_returns(returns, cov=cov, window=cfg["window"])
    rep = fit_N(sample, cfg["n_min"], cfg["n_max"], cfg["resolution"])
    x = np.linspace(-6.0, 6.0, cfg["grid"])
    write_csv(os.path.join(out, "density.csv"), ["x", "density"], [x, univariate_aggregated_density(x, rep.N_hat)])
    hist, edges = np.histogram(sample.values, bins=120, range=(-6, 6))
    dens = hist / (sample.values.size * np.diff(edges))
    write_csv(os.path.join(out, "histogram.csv"), ["x", "density"], [0.5 * (edges[1:] + edges[:-1]), dens])
    write_json(rep.to_dict(), os.path.join(out, "fit.json"))
    return ["density.csv", "histogram.csv", "fit.json"]


def cmd_loss_dist(cfg, out):
    from .merton import avg_loss_density, limiting_loss_density, risk_measures_from_curve

    L = np.linspace(0.0, 1.0, cfg["grid"])
    if cfg["K"] == "inf":
        curve = limiting_loss_density(L, _portfolio(cfg, 1), cfg["c"], cfg["N"], n_z=cfg["n_z"])
    else:
        curve = avg_loss_density(L, _portfolio(cfg, cfg["K"]), cfg["c"], cfg["N"], n_z=cfg["n_z"])
    write_csv(os.path.join(out, "density.csv"), ["L", "density", "cdf"], [L, curve.density, curve.cdf])
    risk = risk_measures_from_curve(curve, cfg["alphas"])
    report = {"alphas": list(risk), "var": [v[0] for v in risk.values()], "etl": [v[1] for v in risk.values()],
              "normalization_defect": curve.normalization_defect, "params": curve.params,
              "metadata": curve.metadata}
    write_json(report, os.path.join(out, "risk.json"))
    return ["density.csv", "risk.json"]


def _correlation_setting(value, K):
    try:
        return float(value)
    except ValueError:
        pass
    with open(value, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    try:
        M = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError:
        raise ParseError(f"non-numeric entry in {value}") from None
    if M.shape != (K, K):
        raise UsageError(f"correlation matrix in {value} is {M.shape}, expected ({K}, {K})")
    return M


def cmd_var(cfg, out):
    from .montecarlo import SimulationConfig, run_losses, var_etl

    corr = _correlation_setting(cfg["correlation"], cfg["K"])
    sim = SimulationConfig(cfg["trials"], cfg["seed"], _portfolio(cfg, cfg["K"]), corr, cfg["n_fluct"],
                           cfg["block_size"], cfg["n_jobs"])
    samples = run_losses(sim)
    rep = var_etl(samples, cfg["alphas"])
    report = rep.to_dict()
    report.update(seed=cfg["seed"], trials=cfg["trials"], nondefault_ratio=samples.nondefault_ratio,
                  dynamics=sim.dynamics)
    write_json(report, os.path.join(out, "risk.json"))
    files = ["risk.json"]
    if cfg["dump_losses"]:
        write_csv(os.path.join(out, "losses.csv"), ["loss"], [samples.losses])
        files.append("losses.csv")
    return files


def cmd_copula(cfg, out):
    from .copula import SCENARIOS, scenario_suite

    if cfg["scenario"] not in SCENARIOS:
        raise UsageError(f"unknown scenario '{cfg['scenario']}'; choose from {', '.join(SCENARIOS)}")
    rep = scenario_suite(cfg["scenario"], cfg["trials"], cfg["repetitions"], cfg["seed"], cfg["B"], cfg["K"],
                         cfg["ties"], cfg["n_jobs"])
    B = cfg["B"]
    i, j = np.meshgrid(np.arange(B), np.arange(B), indexing="ij")
    u = (i.ravel() + 0.5) / B
    v = (j.ravel() + 0.5) / B
    for name, arr in (("empirical", rep.empirical.density), ("gaussian", rep.gaussian.density),
                      ("deviation", rep.deviation.difference)):
        write_csv(os.path.join(out, f"{name}.csv"), ["u", "v", "density"], [u, v, arr.ravel()])
    write_json(rep.summary(), os.path.join(out, "summary.json"))
    return ["empirical.csv", "gaussian.csv", "deviation.csv", "summary.json"]


COMMANDS = {"synth": cmd_synth, "estimate": cmd_estimate, "fit-n": cmd_fit_n, "loss-dist": cmd_loss_dist,
            "var": cmd_var, "copula": cmd_copula}


# --------------------------------------------------------------------------
# entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="rmtcredit", description="Credit risk under fluctuating asset correlations.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name, help=f"run {name}")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        for key, (_, default, text) in schema.items():
            shown = "required" if default is None else f"default {default}"
            p.add_argument(f"--{key}", dest=key, default=None, help=f"{text} ({shown})")
    parser.add_argument("--manifest", help="rerun the configuration stored in a manifest.json")
    parser.add_argument("--out", dest="manifest_out", default=None, help="output directory for --manifest")
    return parser


def _versions():
    return {"rmtcredit": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run(command, cfg, out):
    """Execute a resolved configuration and write the manifest."""
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    files = COMMANDS[command](cfg, out)
    manifest = {"command": command, "config": cfg, "seed": cfg.get("seed"), "outputs": files,
                "versions": _versions(), "wall_time_s": time.perf_counter() - t0}
    write_json(manifest, os.path.join(out, "manifest.json"))
    return manifest


def _error(code, exc, out=None):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    text = dumps(payload)
    sys.stderr.write(text)
    if out:
        try:
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, "error.json"), "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError:
            pass
    return code


def _load_manifest(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if "command" not in data or "config" not in data or data["command"] not in SCHEMAS:
        raise UsageError(f"{path} is not a manifest")
    cfg = {k: v for k, v in data["config"].items() if v is not None}
    return data["command"], cfg


def main(argv=None):
    out = None
    try:
        args = build_parser().parse_args(argv)
        if args.manifest:
            command, stored = _load_manifest(args.manifest)
            cfg = parse_config(command, file_values=stored)
            out = args.manifest_out or os.path.dirname(os.path.abspath(args.manifest))
        else:
            if not args.command:
                raise UsageError("a command is required: " + ", ".join(SCHEMAS))
            command = args.command
            out = args.out
            file_values = read_config_file(args.config) if args.config else None
            flags = {k: getattr(args, k) for k in SCHEMAS[command]}
            cfg = parse_config(command, flags, file_values)
        manifest = run(command, cfg, out)
        sys.stdout.write(dumps({"command": command, "outputs": manifest["outputs"], "out": out}))
        return EXIT_OK
    except UsageError as exc:
        return _error(EXIT_USAGE, exc, out)
    except NumericalError as exc:
        return _error(EXIT_NUMERIC, exc, out)
    except (ParseError, RMTCreditError, ValueError) as exc:
        return _error(EXIT_USAGE, exc, out)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _error(EXIT_NUMERIC, exc, out)
    except OSError as exc:
        return _error(EXIT_IO, exc, out)


if __name__ == "__main__":
    sys.exit(main())
