"""Command-line front end.

Exit codes: 0 success, 1 runtime error, 2 validation error, 3 verification
failed, 4 horizon shorter than the transient time.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import analysis
from ._validation import ValidationError
from .graphs import (
    GenerationError,
    audit_b_connectivity,
    is_regular,
    is_strongly_connected,
    load_graph_sequence,
    theorem_constants,
)
from .model import RateConstants, gamma1, load_model, n_rho_from_log_delta, non_optimal_set
from .sim import SimConfig, monte_carlo, run
from .trace import TraceFormatError, read_trace, write_trace

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, EXIT_VERIFY_FAILED, EXIT_SHORTFALL = 0, 1, 2, 3, 4
OUT_ENV = "PUSHLEARN_OUT"
OVERRIDABLE = ("alpha", "delta", "C", "lambda", "gamma1", "gamma2", "n_rho")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _validation(path, exc) -> CliError:
    return CliError(f"{path}: {exc}", EXIT_VALIDATION)


def _load_model(path):
    if path is None:
        raise CliError("--model is required", EXIT_VALIDATION)
    try:
        return load_model(path)
    except FileNotFoundError:
        raise CliError(f"{path}: file not found", EXIT_VALIDATION) from None
    except (ValidationError, yaml.YAMLError) as exc:
        raise _validation(path, exc) from None


def _load_graph(path):
    if path is None:
        raise CliError("--graph is required", EXIT_VALIDATION)
    try:
        return load_graph_sequence(path)
    except FileNotFoundError:
        raise CliError(f"{path}: file not found", EXIT_VALIDATION) from None
    except (ValidationError, yaml.YAMLError) as exc:
        raise _validation(path, exc) from None


def _experiment(args) -> dict:
    """Merge an optional experiment file with command-line flags (flags win)."""
    exp = {"variant": "push-sum", "horizon": 1000, "runs": 1, "seed": 0, "rho": 0.1, "out": "out"}
    if getattr(args, "config", None):
        try:
            doc = yaml.safe_load(Path(args.config).read_text()) or {}
        except FileNotFoundError:
            raise CliError(f"{args.config}: file not found", EXIT_VALIDATION) from None
        if not isinstance(doc, dict):
            raise CliError(f"{args.config}: experiment file must be a mapping", EXIT_VALIDATION)
        base = Path(args.config).parent
        for key in ("model", "graph"):
            if key in doc:
                doc[key] = str(base / doc[key])
        unknown = set(doc) - {"model", "graph", "variant", "horizon", "runs", "seed", "rho", "out"}
        if unknown:
            raise CliError(f"{args.config}: {sorted(unknown)[0]}: unknown key", EXIT_VALIDATION)
        exp.update(doc)
    for key in ("model", "graph", "variant", "horizon", "runs", "seed", "rho", "out"):
        value = getattr(args, key, None)
        if value is not None:
            exp[key] = value
    if os.environ.get(OUT_ENV):
        exp["out"] = os.environ[OUT_ENV]
    for key in ("horizon", "runs"):
        if not isinstance(exp[key], int) or exp[key] < 1:
            raise CliError(f"{key}: must be a positive integer, got {exp[key]!r}", EXIT_VALIDATION)
    if not 0 < float(exp["rho"]) < 1:
        raise CliError(f"rho: must lie in (0, 1), got {exp['rho']!r}", EXIT_VALIDATION)
    return exp


def _config(exp, record="full") -> SimConfig:
    model = _load_model(exp.get("model"))
    graph = _load_graph(exp.get("graph"))
    try:
        return SimConfig(model, graph, exp["variant"], exp["horizon"], int(exp["seed"]), exp["runs"], record)
    except ValueError as exc:
        raise CliError(f"{exp.get('graph')}: {exc}", EXIT_VALIDATION) from None


def cmd_simulate(args) -> int:
    exp = _experiment(args)
    config = _config(exp, args.record)
    out = Path(exp["out"])
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".json" if args.format == "json" else ".trace"
    files = []
    for r in range(config.runs):
        trace = run(config, r)
        if args.stamp:
            trace.header["stamp"] = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        files.append(write_trace(trace, out / f"run_{r:04d}{suffix}", args.format).name)
    manifest = {
        "config_hash": config.config_hash(),
        "model": exp["model"],
        "graph": exp["graph"],
        "variant": config.variant,
        "horizon": config.horizon,
        "runs": config.runs,
        "master_seed": config.master_seed,
        "record": config.record,
        "traces": files,
    }
    if args.stamp:
        manifest["stamp"] = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(files)} trace(s) to {out}")
    return EXIT_OK


def _apply_overrides(constants: RateConstants, overrides: list[str], model, horizon: int) -> RateConstants:
    if not overrides:
        return constants
    values = {}
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or key not in OVERRIDABLE:
            raise CliError(f"--override: expected KEY=VAL with KEY in {OVERRIDABLE}, got {item!r}", EXIT_VALIDATION)
        try:
            values[key] = float(raw)
        except ValueError:
            raise CliError(f"--override {key}: not a number: {raw!r}", EXIT_VALIDATION) from None
    fields = {
        "alpha": constants.alpha,
        "delta": constants.delta,
        "C": constants.C,
        "lam": constants.lam,
        "gamma1": constants.gamma1,
        "gamma2": constants.gamma2,
        "n_rho": constants.n_rho,
        "rho": constants.rho,
        "case": constants.case,
        "delta_source": "override" if "delta" in values else constants.delta_source,
        "non_optimal": constants.non_optimal,
    }
    for key, value in values.items():
        if key == "lambda":
            fields["lam"] = value
        elif key == "gamma1":
            fields["gamma1"] = np.full(model.n, value)
        elif key == "n_rho":
            fields["n_rho"] = int(value)
        else:
            fields[key] = value
    if ("C" in values or "lambda" in values) and "gamma1" not in values:
        fields["gamma1"] = gamma1(model, fields["C"], fields["lam"])
    if {"alpha", "delta", "gamma2"} & set(values) and "n_rho" not in values:
        fields["n_rho"] = n_rho_from_log_delta(fields["alpha"], math.log(fields["delta"]), fields["gamma2"], fields["rho"])
    try:
        return RateConstants(**fields)
    except ValueError as exc:
        raise CliError(f"--override: {exc}", EXIT_VALIDATION) from None


def _slope_rows(label, trace, window, thetas, refs):
    rows = []
    for i in range(trace.n):
        for c, v in enumerate(thetas):
            row = {
                "trace": label,
                "agent": i,
                "theta_v": v,
                "slope": format(analysis.decay_slope(trace, i, v, window), ".17g"),
                "ref_uniform": "",
                "ref_influence": "",
            }
            if refs is not None:
                row["ref_uniform"] = format(float(refs.uniform[c, i]), ".17g")
                if refs.influence is not None:
                    row["ref_influence"] = format(float(refs.influence[c, i]), ".17g")
            rows.append(row)
    return rows


def _csv(rows) -> str:
    buf = io.StringIO()
    fields = ["trace", "agent", "theta_v", "slope", "ref_uniform", "ref_influence"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def cmd_verify(args) -> int:
    exp = _experiment(args)
    config = _config(exp, "full")
    rho = float(exp["rho"])
    try:
        constants = analysis.rate_constants(config.model, config.graph, rho, config.horizon, args.delta_mode)
    except GenerationError as exc:
        raise CliError(str(exc), EXIT_RUNTIME) from None
    constants = _apply_overrides(constants, args.override, config.model, config.horizon)
    report = {"config_hash": config.config_hash(), "variant": config.variant, "horizon": config.horizon}
    report.update(constants.as_dict())
    out = Path(exp["out"])
    out.mkdir(parents=True, exist_ok=True)
    if config.horizon < constants.n_rho:
        report["status"] = "horizon-shortfall"
        report["required_horizon"] = constants.n_rho
        (out / "report.txt").write_text(analysis.format_record(report))
        sys.stdout.write(analysis.format_record(report))
        print(f"horizon {config.horizon} is shorter than N(rho) = {constants.n_rho}", file=sys.stderr)
        return EXIT_SHORTFALL
    summary = monte_carlo(config, constants, rho, workers=args.workers)
    report.update(summary.as_dict())
    passed = summary.violating_fraction <= rho
    report["status"] = "pass" if passed else "fail"
    (out / "report.txt").write_text(analysis.format_record(report))
    refs = analysis.reference_rates(config.model, config.graph)
    q = summary.slope_quantiles()
    rows = []
    for i in range(config.model.n):
        for c, v in enumerate(summary.theta_v):
            rows.append(
                {
                    "agent": i,
                    "theta_v": v,
                    "slope_q05": format(float(q[0, i, c]), ".17g"),
                    "slope_q50": format(float(q[1, i, c]), ".17g"),
                    "slope_q95": format(float(q[2, i, c]), ".17g"),
                    "ref_uniform": format(float(refs.uniform[c, i]), ".17g"),
                    "ref_influence": "" if refs.influence is None else format(float(refs.influence[c, i]), ".17g"),
                }
            )
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    (out / "slopes.csv").write_text(buf.getvalue())
    sys.stdout.write(analysis.format_record(report))
    return EXIT_OK if passed else EXIT_VERIFY_FAILED


def cmd_graph_audit(args) -> int:
    seq = _load_graph(args.graph)
    B = args.B or seq.B
    try:
        audit = audit_b_connectivity(seq, B, args.windows)
    except GenerationError as exc:
        raise CliError(str(exc), EXIT_RUNTIME) from None
    horizon = args.windows * B
    report = {"kind": seq.kind, "n": seq.n, "B": B, "windows": args.windows, "connected": audit.ok}
    if not audit.ok:
        report["first_failing_window"] = audit.first_failure
        sys.stdout.write(analysis.format_record(report))
        print(f"B-connectivity fails in window {audit.first_failure}", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    steps = range(horizon) if seq.kind == "seeded-random" else range(seq.period)
    report["all_regular"] = all(is_regular(seq.graph(k)) for k in steps)
    report["all_strongly_connected"] = all(is_strongly_connected(seq.graph(k)) for k in steps)
    tc = theorem_constants(seq if B == seq.B else dataclasses.replace(seq, B=B), horizon)
    report.update(case=tc.case, C=tc.C, **{"lambda": tc.lam, "one_minus_lambda": tc.one_minus_lambda})
    report["log_delta_floor"] = tc.log_delta_floor
    report["empirical_delta"] = analysis.empirical_delta(seq, horizon)
    erg = analysis.ergodicity_check(seq, min(horizon, args.ergodicity_horizon), tc)
    report["ergodicity_max_excess"] = erg.max_excess
    sys.stdout.write(analysis.format_record(report))
    return EXIT_OK


def _parse_window(text):
    if text is None:
        return None
    a, sep, b = text.partition(":")
    try:
        return int(a), int(b)
    except ValueError:
        raise CliError(f"--window: expected K0:K1, got {text!r}", EXIT_VALIDATION) from None


def cmd_slopes(args) -> int:
    model = _load_model(args.model) if args.model else None
    graph = _load_graph(args.graph) if args.graph else None
    refs = analysis.reference_rates(model, graph) if model is not None else None
    window = _parse_window(args.window)
    rows = []
    for path in args.traces:
        try:
            trace = read_trace(path)
        except FileNotFoundError:
            raise CliError(f"{path}: file not found", EXIT_VALIDATION) from None
        except TraceFormatError as exc:
            raise _validation(path, exc) from None
        if model is not None and (model.n, model.m) != (trace.n, trace.m):
            raise CliError(f"{path}: trace shape does not match model", EXIT_VALIDATION)
        thetas = non_optimal_set(model) if model is not None else tuple(range(trace.m))
        w = window or analysis.default_window(trace.horizon)
        try:
            rows += _slope_rows(Path(path).name, trace, w, thetas, refs)
        except ValueError as exc:
            raise CliError(f"{path}: {exc}", EXIT_VALIDATION) from None
    text = _csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _experiment_flags(p):
    p.add_argument("--config", help="experiment file (YAML) with model, graph, variant, horizon, runs, seed, rho, out")
    p.add_argument("--model", help="model file")
    p.add_argument("--graph", help="graph-sequence file")
    p.add_argument("--variant", choices=("push-sum", "plain"))
    p.add_argument("--horizon", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (env {OUT_ENV} overrides)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pushlearn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run seeded trajectories and write traces")
    _experiment_flags(p)
    p.add_argument("--record", choices=("full", "summary"), default="full")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--stamp", action="store_true", help="add timestamps to headers")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="Monte Carlo check of the finite-time belief bound")
    _experiment_flags(p)
    p.add_argument("--rho", type=float)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VAL")
    p.add_argument("--delta-mode", choices=("empirical", "analytic"), default="empirical")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: all CPUs)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("graph-audit", help="connectivity, regularity and ergodicity report")
    p.add_argument("--graph", required=True)
    p.add_argument("--B", type=int, default=None)
    p.add_argument("--windows", type=int, default=100)
    p.add_argument("--ergodicity-horizon", type=int, default=50)
    p.set_defaults(func=cmd_graph_audit)

    p = sub.add_parser("slopes", help="decay slopes of log-beliefs as CSV")
    p.add_argument("traces", nargs="+")
    p.add_argument("--window", help="K0:K1 (default: drop the first 10%%)")
    p.add_argument("--model")
    p.add_argument("--graph")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_slopes)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
