"""Command-line interface: ``didguard analyze | simulate | critval``."""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import math
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .core import SeverityParams, TimeLayout, ViolationMode, overall_transform_matrix
from .estimators import (
    BootstrapConfig,
    DataError,
    Design,
    ResampleLevel,
    estimate_covariance_bootstrap,
    estimate_theta_sample_means,
    estimate_theta_twfe,
)
from .inference import InferenceParams, confidence_interval, critical_value
from .io import read_dataset, read_matrix
from .sim import DgpSpec, ExperimentKind, ExperimentSpec, run_experiment, write_results

logger = logging.getLogger("didguard")

EXIT_OK, EXIT_INPUT, EXIT_REJECT = 0, 2, 3

ANALYZE_DEFAULTS = {
    "data": None,
    "t0": None,
    "periods": None,
    "p": None,
    "threshold_M": None,
    "alpha": 0.05,
    "mode": "iterative",
    "cov": "plugin",
    "bootstrap_reps": 1000,
    "resample_level": "cluster",
    "design": "auto",
    "cluster_column": "cluster_id",
    "weight_column": "weight",
    "estimand_weights": None,
    "mc_draws": 5000,
    "seed": 0,
    "estimator": "means",
    "fail_on_reject": False,
    "show_invalid": False,
    "output": "text",
    "threads": None,
}

# keys that read as booleans when they come from a config file
_BOOL_KEYS = {"fail_on_reject", "show_invalid"}
_INT_KEYS = {"t0", "periods", "bootstrap_reps", "mc_draws", "seed", "threads"}
_FLOAT_KEYS = {"p", "threshold_M", "alpha"}


def parse_p(text) -> float:
    if isinstance(text, (int, float)):
        value = float(text)
    elif str(text).strip().lower() in ("inf", "infinity", "∞"):
        value = math.inf
    else:
        value = float(text)
    if not value >= 1:
        raise argparse.ArgumentTypeError(f"p must be >= 1 (or 'inf'), got {text}")
    return value


def parse_weights(text):
    if text is None or text == "":
        return None
    return tuple(float(x) for x in str(text).split(","))


def _coerce(key: str, value: str):
    if key in _BOOL_KEYS:
        return value.strip().lower() in ("1", "true", "yes", "on")
    if key == "p":
        return parse_p(value)
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    return value.strip()


def load_analyze_config(path) -> dict:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path, encoding="utf-8"):
        raise DataError(f"cannot read config file {path}")
    out = {}
    for section in parser.sections():
        if section != "analyze":
            raise DataError(f"{path}: unknown section [{section}]; expected [analyze]")
        for key, value in parser[section].items():
            if key not in ANALYZE_DEFAULTS:
                raise DataError(f"{path}: unknown key {key!r} in [analyze]")
            out[key] = _coerce(key, value)
    return out


def resolve_analyze(args: argparse.Namespace) -> dict:
    cfg = dict(ANALYZE_DEFAULTS)
    if args.config:
        cfg.update(load_analyze_config(args.config))
    for key in ANALYZE_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            cfg[key] = value
    return cfg


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    if hasattr(x, "value") and isinstance(x.value, str):
        return x.value
    return x


def _estimate(cfg: dict):
    data = read_dataset(
        cfg["data"],
        t0=cfg["t0"],
        periods=cfg["periods"],
        design=cfg["design"],
        cluster_column=cfg["cluster_column"],
        weight_column=cfg["weight_column"],
    )
    if cfg["estimator"] == "twfe":
        est = estimate_theta_twfe(data)
    else:
        est = estimate_theta_sample_means(data, covariance="none")
    if cfg["cov"] == "plugin":
        if cfg["estimator"] != "means":
            raise DataError("plug-in covariance is only available with --estimator means")
        if data.design is Design.PANEL:
            raise DataError("plug-in covariance is unavailable for panel data; use --cov bootstrap")
        est = estimate_theta_sample_means(data, covariance="plugin")
    else:
        level = ResampleLevel(cfg["resample_level"])
        if level is ResampleLevel.CLUSTER and data.cluster_id is None:
            level = ResampleLevel.UNIT if data.unit_id is not None else ResampleLevel.ROW
            logger.warning("no cluster column; resampling by %s", level.value)
        boot = BootstrapConfig(
            replications=cfg["bootstrap_reps"],
            resample_level=level,
            seed=cfg["seed"],
            threads=cfg["threads"],
        )
        cov = estimate_covariance_bootstrap(data, cfg["estimator"], boot)
        est = est.with_covariance(cov)
    return data, est


def _text_report(est, report, cfg: dict) -> str:
    layout = est.layout
    lines = [
        f"periods T={layout.total_periods}  treatment t0={layout.treatment_time}  "
        f"T_pre={layout.t_pre}  T_post={layout.t_post}  min cell size={est.effective_n}",
        "",
        f"{'component':<14}{'estimate':>14}{'std.err':>14}",
    ]
    se = np.sqrt(np.clip(np.diag(est.covariance), 0, None))
    names = [f"r_{t}" for t in range(2, layout.treatment_time)] + [
        f"dd_{t}" for t in range(layout.treatment_time, layout.total_periods + 1)
    ]
    for name, v, s in zip(names, est.values, se):
        lines.append(f"{name:<14}{v:>14.6g}{s:>14.6g}")
    pre = report.pretest
    p = cfg["p"]
    lines += [
        "",
        f"severity (p={'inf' if math.isinf(p) else p:g}, mode={pre.mode.value}): "
        f"S_pre_hat={pre.s_pre_hat:.6g}  M={pre.threshold_M:.6g}  margin={pre.margin:.6g}",
        f"pretest phi={pre.phi}: {pre.describe()}",
    ]
    conv = (
        f"conventional {100 * (1 - report.alpha):g}% CI: "
        f"[{report.conventional_lower:.6g}, {report.conventional_upper:.6g}]"
    )
    if report.conditionally_valid or cfg["show_invalid"]:
        tag = "" if report.conditionally_valid else "  (NOT conditionally valid: pretest rejected)"
        lines += [
            f"point estimate {report.point:.6g}",
            f"half-width {report.half_width:.6g} = bias {report.bias_component:.6g} "
            f"(coefficient {report.bias_coefficient:.6g}) + noise {report.noise_component:.6g}",
            f"{100 * (1 - report.alpha):g}% CI: [{report.lower:.6g}, {report.upper:.6g}]{tag}",
            conv,
        ]
    else:
        lines.append("interval suppressed because extrapolation is not justified (use --show-invalid)")
    return "\n".join(lines)


def json_report(est, report) -> dict:
    layout = est.layout
    return _jsonable(
        {
            "theta": {
                "total_periods": layout.total_periods,
                "treatment_time": layout.treatment_time,
                "values": est.values,
                "covariance": est.covariance,
                "effective_n": est.effective_n,
                "mode": est.mode,
                "cell_counts": est.cell_counts,
            },
            "pretest": dataclasses.asdict(report.pretest),
            "interval": {
                k: getattr(report, k)
                for k in (
                    "point", "half_width", "lower", "upper", "bias_component", "noise_component",
                    "critical_value", "bias_coefficient", "conventional_lower", "conventional_upper",
                    "conventional_se", "alpha", "mode", "estimand_weights",
                )
            }
            | {"conditionally_valid": report.conditionally_valid},
        }
    )


def cmd_analyze(args) -> int:
    cfg = resolve_analyze(args)
    if cfg["data"] is None or cfg["t0"] is None:
        raise DataError("--data and --t0 are required")
    if cfg["threshold_M"] is None:
        raise DataError("the severity threshold M (--M) has no default and must be chosen explicitly")
    if cfg["p"] is None:
        cfg["p"] = 2.0
        print("note: p not specified; using p = 2", file=sys.stderr)
    sev = SeverityParams(cfg["p"], cfg["threshold_M"], ViolationMode(cfg["mode"]))
    _, est = _estimate(cfg)
    params = InferenceParams(
        sev,
        alpha=cfg["alpha"],
        mc_draws=cfg["mc_draws"],
        seed=cfg["seed"],
        estimand_weights=parse_weights(cfg["estimand_weights"]),
        threads=cfg["threads"],
    )
    report = confidence_interval(est, params)
    if cfg["output"] == "json":
        print(json.dumps(json_report(est, report), indent=2))
    else:
        print(_text_report(est, report, cfg))
    if report.pretest.phi == 1 and cfg["fail_on_reject"]:
        return EXIT_REJECT
    return EXIT_OK


_EXPERIMENT_KEYS = {"kind", "replications", "alpha", "master_seed", "mc_draws", "x_name", "name"}
_DGP_FIELDS = {f.name: f for f in dataclasses.fields(DgpSpec)}


def _dgp_value(key: str, text: str):
    if key == "p":
        return parse_p(text)
    ftype = _DGP_FIELDS[key].type
    return int(text) if ftype in (int, "int") else float(text)


def bundled_config(name: str) -> Path:
    ref = resources.files("didguard") / "configs" / name
    return Path(str(ref))


def load_experiment(path) -> ExperimentSpec:
    """Parse an INI config with ``[experiment]``, ``[dgp]`` and ``[grid]`` sections."""
    path = Path(path)
    if not path.exists() and bundled_config(path.name).exists():
        path = bundled_config(path.name)
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path, encoding="utf-8"):
        raise DataError(f"cannot read config file {path}")
    unknown = set(parser.sections()) - {"experiment", "dgp", "grid"}
    if unknown:
        raise DataError(f"{path}: unknown section(s) {sorted(unknown)}")
    exp = dict(parser["experiment"]) if parser.has_section("experiment") else {}
    bad = set(exp) - _EXPERIMENT_KEYS
    if bad:
        raise DataError(f"{path}: unknown key(s) in [experiment]: {sorted(bad)}")
    dgp_items = dict(parser["dgp"]) if parser.has_section("dgp") else {}
    grid_items = dict(parser["grid"]) if parser.has_section("grid") else {}
    for section, items in (("dgp", dgp_items), ("grid", grid_items)):
        bad = set(items) - set(_DGP_FIELDS)
        if bad:
            raise DataError(f"{path}: unknown key(s) in [{section}]: {sorted(bad)}")
    base = DgpSpec(**{k: _dgp_value(k, v) for k, v in dgp_items.items()})
    grid = {
        k: [_dgp_value(k, x.strip()) for x in v.replace("\n", ",").split(",") if x.strip()]
        for k, v in grid_items.items()
    }
    if "kind" not in exp:
        raise DataError(f"{path}: [experiment] must set kind")
    return ExperimentSpec(
        kind=ExperimentKind(exp["kind"]),
        grid=grid,
        base=base,
        replications=int(exp.get("replications", 5000)),
        alpha=float(exp.get("alpha", 0.05)),
        master_seed=int(exp.get("master_seed", 0)),
        mc_draws=int(exp.get("mc_draws", 5000)),
        x_name=exp.get("x_name"),
        name=exp.get("name", path.stem),
    )


def cmd_simulate(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in args.config:
        spec = load_experiment(path)
        overrides = {}
        if args.replications is not None:
            overrides["replications"] = args.replications
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if args.mc_draws is not None:
            overrides["mc_draws"] = args.mc_draws
        if overrides:
            spec = dataclasses.replace(spec, **overrides)
        table = run_experiment(spec, threads=args.threads)
        target = out_dir / f"{spec.label}.csv"
        write_results(table, target)
        print(f"== {spec.label} ({spec.kind.value}, R={spec.replications}) -> {target}")
        wide = table.pivot_table(
            index=["scenario_id"], columns="metric", values="value", sort=False, dropna=False
        )
        print(wide.to_string(float_format=lambda v: f"{v:.4f}", na_rep="NA"))
    return EXIT_OK


def cmd_critval(args) -> int:
    layout = TimeLayout(args.T, args.t0)
    sigma = read_matrix(args.sigma)
    dim = layout.theta_length()
    if sigma.shape != (dim, dim):
        raise DataError(f"sigma must be {dim}x{dim} for T={args.T}, t0={args.t0}; got {sigma.shape}")
    scale = max(1.0, float(np.abs(sigma).max()))
    if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-10 * scale):
        raise DataError("sigma is not symmetric")
    mode = ViolationMode(args.mode)
    if mode is ViolationMode.OVERALL:
        L = overall_transform_matrix(layout)
        sigma = L @ sigma @ L.T
    sev = SeverityParams(args.p, 0.0, mode)
    value = critical_value(
        args.alpha, sigma, layout, sev, seed=args.seed, n_draws=args.draws,
        weights=parse_weights(args.estimand_weights), threads=args.threads,
    )
    print(f"{value:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="didguard",
        description="Pretest and conditionally valid inference for difference-in-differences.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="pretest and confidence interval for a CSV dataset")
    a.add_argument("--config", help="INI file with an [analyze] section; flags override it")
    a.add_argument("--data", help="long-format CSV (time, treated, outcome[, unit_id, cluster_id, weight])")
    a.add_argument("--t0", type=int, help="first treated period")
    a.add_argument("--periods", type=int, help="total number of periods T (default: max time)")
    a.add_argument("--p", type=parse_p, help="severity norm order, a number >= 1 or 'inf' (default 2)")
    a.add_argument("--M", dest="threshold_M", type=float, help="acceptable severity threshold (required)")
    a.add_argument("--alpha", type=float)
    a.add_argument("--mode", choices=["iterative", "overall"])
    a.add_argument("--cov", choices=["plugin", "bootstrap"])
    a.add_argument("--bootstrap-reps", type=int)
    a.add_argument("--resample-level", choices=["cluster", "unit", "row"])
    a.add_argument("--design", choices=["auto", "panel", "rcs"])
    a.add_argument("--cluster-column")
    a.add_argument("--weight-column")
    a.add_argument("--estimand-weights", help="comma-separated weights, one per post period")
    a.add_argument("--mc-draws", type=int)
    a.add_argument("--seed", type=int)
    a.add_argument("--estimator", choices=["means", "twfe"])
    a.add_argument("--fail-on-reject", action="store_true", default=None)
    a.add_argument("--show-invalid", action="store_true", default=None)
    a.add_argument("--output", choices=["text", "json"])
    a.add_argument("--threads", type=int)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run Monte-Carlo experiments from config files")
    s.add_argument("config", nargs="+", help="experiment config path(s) or bundled config name(s)")
    s.add_argument("--out-dir", default="results")
    s.add_argument("--replications", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--mc-draws", type=int)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("critval", help="Monte-Carlo critical value f(alpha, Sigma)")
    c.add_argument("--sigma", required=True, help="headerless CSV with the (T-1)x(T-1) covariance")
    c.add_argument("--alpha", type=float, default=0.05)
    c.add_argument("--p", type=parse_p, default=2.0)
    c.add_argument("--t0", type=int, required=True)
    c.add_argument("--T", type=int, required=True)
    c.add_argument("--mode", choices=["iterative", "overall"], default="iterative")
    c.add_argument("--estimand-weights")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--draws", type=int, default=5000)
    c.add_argument("--threads", type=int)
    c.set_defaults(func=cmd_critval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    if getattr(args, "threads", None) is None and os.environ.get("DIDGUARD_THREADS"):
        args.threads = int(os.environ["DIDGUARD_THREADS"])
    try:
        return args.func(args)
    except (DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
