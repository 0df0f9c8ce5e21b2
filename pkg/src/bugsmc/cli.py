"""Command-line driver: check models, run smc / pimh / pmmh / sensitivity.

Exit codes are a stable contract: 0 ok, 2 parse error, 3 compile/config
error, 4 diagnosis failure (results still written), 5 runtime inference
failure. Seeds default to a fixed constant so reruns are reproducible;
identical configurations and seeds produce byte-identical JSON payloads.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from .bundles import extended_registry
from .data import load_data
from .distributions import ParamError, TruncationError
from .graph import CompileError
from .lexer import LexError
from .model import Model, ModelError
from .ordering import export_dot
from .parser import ParseError
from .pmcmc import (PmcmcError, pimh_init, pimh_samples, pimh_update,
                    pmmh_init, pmmh_samples, pmmh_update, smc_sensitivity)
from .postproc import summaries_to_csv, summarize_smc, summarize_traces
from .registry import ExtensionError
from .resampling import KINDS
from .smc import DegenerateWeightsError, diagnose, run_smc

DEFAULT_SEED = 42

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_COMPILE = 3
EXIT_DIAGNOSIS = 4
EXIT_RUNTIME = 5


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bugsmc",
        description="Compile BUGS-dialect models and run particle inference.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_monitor=False):
        p.add_argument("--model", required=True, help="model file (.bug)")
        p.add_argument("--data", required=True, help="data table (.json)")
        p.add_argument("--monitor", action="append", default=[],
                       help="variable or element to record (repeatable)")
        p.add_argument("--particles", type=int, default=1000)
        p.add_argument("--resampling", choices=KINDS, default="systematic")
        p.add_argument("--threshold", type=float, default=0.5,
                       help="resample when ESS < threshold * N")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--probs", default="0.025,0.5,0.975",
                       help="comma-separated quantile levels")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="trace/summary format")
        p.add_argument("--threads", type=int, default=1,
                       help="reserved; execution is sequential")

    p_check = sub.add_parser("check", help="parse, validate, and compile")
    p_check.add_argument("--model", required=True)
    p_check.add_argument("--data", required=True)
    p_check.add_argument("--out", default=".")
    p_check.add_argument("--dot", action="store_true",
                         help="write a Graphviz export of the arranged graph")

    p_smc = sub.add_parser("smc", help="one SMC pass with diagnostics")
    common(p_smc)

    p_pimh = sub.add_parser("pimh", help="particle independent MH")
    common(p_pimh)
    p_pimh.add_argument("--burn", type=int, default=0)
    p_pimh.add_argument("--iter", type=int, default=1000)
    p_pimh.add_argument("--thin", type=int, default=1)

    p_pmmh = sub.add_parser("pmmh", help="particle marginal MH")
    common(p_pmmh)
    p_pmmh.add_argument("--burn", type=int, default=0)
    p_pmmh.add_argument("--iter", type=int, default=1000)
    p_pmmh.add_argument("--thin", type=int, default=1)
    p_pmmh.add_argument("--param", action="append", default=[],
                        metavar="NAME=INIT",
                        help="parameter with initial value (repeatable); "
                             "NAME= draws the init from the prior")
    p_pmmh.add_argument("--latent", action="append", default=[],
                        help="latent variable to trace (repeatable)")

    p_sens = sub.add_parser("sensitivity",
                            help="marginal likelihood over a parameter grid")
    common(p_sens)
    p_sens.add_argument("--param", action="append", default=[],
                        metavar="NAME=SPEC",
                        help="grid values: NAME=lo:step:hi or NAME=v1,v2,...; "
                             "repeated flags form a cartesian product")
    return parser


def _positive(args) -> None:
    if args.particles < 1:
        raise ValueError("--particles must be >= 1")
    if not (0.0 <= args.threshold <= 1.0):
        raise ValueError("--threshold must lie in [0, 1]")
    if args.threads < 1:
        raise ValueError("--threads must be >= 1")
    if args.seed < 0:
        raise ValueError("--seed must be a nonnegative integer")
    for name in ("burn", "iter", "thin"):
        if hasattr(args, name) and getattr(args, name) < 0:
            raise ValueError(f"--{name} must be >= 0")


def _load_model(args) -> Model:
    data = load_data(args.data)
    return Model.from_file(args.model, data, registry=extended_registry())


def _probs(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _trace_rows(columns: dict[str, np.ndarray], thin: int) -> list[dict]:
    names = list(columns)
    length = len(next(iter(columns.values()))) if columns else 0
    rows = []
    for i in range(length):
        row = {"iteration": (i + 1) * thin}
        for name in names:
            row[name] = repr(float(columns[name][i]))
        rows.append(row)
    return rows


def _write_traces(out_dir: str, stem: str, columns: dict[str, np.ndarray],
                  thin: int, fmt: str) -> None:
    if fmt == "json":
        payload = {name: [float(v) for v in values]
                   for name, values in columns.items()}
        _write(os.path.join(out_dir, f"{stem}_trace.json"),
               json.dumps(payload, sort_keys=True) + "\n")
        return
    path = os.path.join(out_dir, f"{stem}_trace.csv")
    os.makedirs(out_dir, exist_ok=True)
    fields = ["iteration"] + list(columns)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in _trace_rows(columns, thin):
            writer.writerow(row)


def _write_summary(out_dir: str, rows: list[dict], fmt: str,
                   name: str = "summary") -> None:
    if fmt == "json":
        _write(os.path.join(out_dir, f"{name}.json"),
               json.dumps(rows, sort_keys=True) + "\n")
    else:
        _write(os.path.join(out_dir, f"{name}.csv"), summaries_to_csv(rows))


def cmd_check(args) -> int:
    model = _load_model(args)
    counts = model.graph.counts()
    print(f"model: {args.model}")
    print(f"nodes: {len(model.graph)} total | constant {counts['constant']} "
          f"| logical {counts['logical']} | stochastic {counts['stochastic']} "
          f"({counts['observed']} observed)")
    print(f"arrangement: n = {model.n_steps} steps")
    if args.dot:
        path = os.path.join(args.out, "model.dot")
        _write(path, export_dot(model.graph, model.arrangement))
        print(f"wrote {path}")
    return EXIT_OK


def cmd_smc(args) -> int:
    model = _load_model(args)
    monitors = args.monitor or ["x"]
    output = run_smc(model.graph, model.arrangement, monitors, args.particles,
                     resampling=args.resampling, threshold=args.threshold,
                     seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "smc_output.json"),
           output.to_json(indent=None) + "\n")
    _write(os.path.join(args.out, "summary.csv"),
           summaries_to_csv(summarize_smc(output, _probs(args.probs))))
    sess_lines = ["step,ess,sess"]
    for t in range(output.n_steps):
        sess_lines.append(f"{t + 1},{output.ess[t]!r},{output.sess[t]!r}")
    _write(os.path.join(args.out, "sess.csv"), "\n".join(sess_lines) + "\n")
    report = diagnose(output)
    _write(os.path.join(args.out, "diagnosis.txt"), str(report) + "\n")
    print(f"log marginal likelihood: {output.log_marg_like!r}")
    print(str(report))
    return EXIT_OK if report.passed else EXIT_DIAGNOSIS


def cmd_pimh(args) -> int:
    model = _load_model(args)
    monitors = args.monitor or ["x"]
    state = pimh_init(model, monitors, seed=args.seed,
                      resampling=args.resampling, threshold=args.threshold)
    pimh_update(state, args.burn, args.particles)
    traces, log_z = pimh_samples(state, args.iter, args.particles,
                                 thin=max(args.thin, 1))
    columns = {"log_marg_like": log_z}
    columns.update(traces)
    _write_traces(args.out, "pimh", columns, max(args.thin, 1), args.format)
    _write_summary(args.out, summarize_traces(traces, _probs(args.probs)),
                   args.format)
    print(f"pimh: {state.iteration} iterations, acceptance rate "
          f"{state.acceptance_rate:.3f}, {len(log_z)} retained draws")
    return EXIT_OK


def _parse_param_inits(specs: list[str]) -> tuple[list[str], list | None]:
    names, inits, missing = [], [], 0
    for spec in specs:
        name, eq, value = spec.partition("=")
        if not eq:
            raise ValueError(f"--param needs NAME=INIT, got {spec!r}")
        names.append(name.strip())
        if value.strip():
            inits.append(float(value))
        else:
            missing += 1
    if missing and missing != len(names):
        raise ValueError("either give inits for all --param flags or none")
    return names, (None if missing else inits)


def cmd_pmmh(args) -> int:
    model = _load_model(args)
    if not args.param:
        raise ValueError("pmmh requires at least one --param NAME=INIT")
    names, inits = _parse_param_inits(args.param)
    state = pmmh_init(model, names, inits=inits, latent_names=args.latent,
                      seed=args.seed, resampling=args.resampling,
                      threshold=args.threshold)
    pmmh_update(state, args.burn, args.particles)
    result = pmmh_samples(state, args.iter, args.particles,
                          thin=max(args.thin, 1))
    columns = {"log_marg_like": result.log_marg_like,
               "log_marg_like_pen": result.log_marg_like_pen}
    columns.update(result.params)
    columns.update(result.latents)
    _write_traces(args.out, "pmmh", columns, max(args.thin, 1), args.format)
    rows = summarize_traces({**result.params, **result.latents},
                            _probs(args.probs))
    _write_summary(args.out, rows, args.format)
    _write(os.path.join(args.out, "acceptance.txt"),
           f"adaptation iterations: {state.adapt_iterations}\n"
           f"sampling acceptance rate: {result.acceptance_rate!r}\n"
           f"proposal scales: "
           f"{json.dumps({p.name: float(s) for p, s in zip(state.params, state.scales)}, sort_keys=True)}\n")
    print(f"pmmh: acceptance rate {result.acceptance_rate:.3f}, "
          f"{len(result.log_marg_like)} retained draws")
    return EXIT_OK


def _parse_grid_spec(value: str) -> list[float]:
    value = value.strip()
    if ":" in value:
        parts = value.split(":")
        if len(parts) != 3:
            raise ValueError(f"range spec must be lo:step:hi, got {value!r}")
        lo, step, hi = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("range step must be > 0")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [lo + k * step for k in range(max(count, 0))]
    return [float(p) for p in value.split(",") if p.strip()]


def cmd_sensitivity(args) -> int:
    model = _load_model(args)
    if not args.param:
        raise ValueError("sensitivity requires at least one --param NAME=SPEC")
    axes: list[tuple[str, list[float]]] = []
    for spec in args.param:
        name, eq, value = spec.partition("=")
        if not eq:
            raise ValueError(f"--param needs NAME=SPEC, got {spec!r}")
        axes.append((name.strip(), _parse_grid_spec(value)))
    names = [name for name, _ in axes]
    mesh = np.meshgrid(*[vals for _, vals in axes], indexing="ij")
    grid = {name: m.reshape(-1).tolist() for name, m in zip(names, mesh)}
    result = smc_sensitivity(model, grid, args.particles, seed=args.seed,
                             resampling=args.resampling,
                             threshold=args.threshold)
    os.makedirs(args.out, exist_ok=True)
    lines = [",".join(names) + ",log_ml"]
    for j, assignment in enumerate(result.assignments):
        value = "-inf" if result.failed[j] else repr(float(result.log_marg_like[j]))
        lines.append(",".join(repr(float(assignment[name])) for name in names)
                     + f",{value}")
    _write(os.path.join(args.out, "sensitivity.csv"), "\n".join(lines) + "\n")
    best = result.best
    print(f"sensitivity: {len(result.assignments)} points, argmax at "
          + ", ".join(f"{k}={best[k]!r}" for k in names))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "check":
            return cmd_check(args)
        _positive(args)
        if args.command == "smc":
            return cmd_smc(args)
        if args.command == "pimh":
            return cmd_pimh(args)
        if args.command == "pmmh":
            return cmd_pmmh(args)
        if args.command == "sensitivity":
            return cmd_sensitivity(args)
        parser.error(f"unknown command {args.command!r}")
    except LexError as exc:
        print(f"lex error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (CompileError, ModelError) as exc:
        print(f"compile error: {exc}", file=sys.stderr)
        return EXIT_COMPILE
    except (KeyError, ValueError, FileNotFoundError) as exc:
        message = exc.args[0] if exc.args else exc
        print(f"config error: {message}", file=sys.stderr)
        return EXIT_COMPILE
    except (DegenerateWeightsError, PmcmcError, ExtensionError, ParamError,
            TruncationError) as exc:
        print(f"inference failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
