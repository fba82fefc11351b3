"""Command-line interface.

Subcommands
-----------
``benchmark``
    Run a full Monte Carlo campaign from a JSON config and write
    ``rmse_<filter>.csv``, ``channel.csv`` and ``summary.json``.
``channel-stats``
    Simulate the delay channel alone and print a JSON report comparing the
    empirical delay/dropout statistics and noise autocovariance against the
    law's predictions.
``simulate``
    Run one (or a few) Monte Carlo runs with full per-step traces: channel
    trace, per-filter estimates, SMC diagnostics.
``backend-bench``
    Time a reduced campaign on the compiled and pure-numpy backends and
    print the comparison.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure
(a filter produced no usable runs).
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .backend import available_backends, get_kernels
from .exceptions import ConfigError, FilterDivergence
from .harness import (
    build_model,
    build_profile,
    channel_diagnostics,
    load_config,
    run_campaign,
    run_single,
    write_estimates,
    write_outputs,
    write_smc_diagnostics,
    write_trace,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _add_backend_arg(p):
    p.add_argument(
        "--backend",
        choices=("auto", "numba", "numpy"),
        default=None,
        help="kernel backend override (default: module default)",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="delayfilter",
        description="Benchmarks for state estimation under random measurement delays and dropouts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("benchmark", help="run a Monte Carlo campaign")
    b.add_argument("--config", required=True, help="scenario JSON")
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--check-invariants", action="store_true", help="enable per-step invariant checks")
    b.add_argument("--quiet", action="store_true")
    _add_backend_arg(b)

    c = sub.add_parser("channel-stats", help="test the channel law empirically")
    c.add_argument("--config", required=True, help="scenario JSON (channel block is used)")
    c.add_argument("--samples", type=int, required=True, help="number of simulated receive steps")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    _add_backend_arg(c)

    s = sub.add_parser("simulate", help="trace individual runs")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--runs", type=int, default=1, help="number of runs to trace")
    s.add_argument("--trace", action="store_true", help="write per-step channel/estimate/diagnostic traces")
    _add_backend_arg(s)

    bb = sub.add_parser("backend-bench", help="compare compiled and numpy backends")
    bb.add_argument("--config", default=None, help="scenario JSON (reduced defaults if omitted)")
    bb.add_argument("--runs", type=int, default=5, help="Monte Carlo runs per backend")
    return parser


def _cmd_benchmark(args):
    config = load_config(args.config)
    kern = get_kernels(args.backend)
    result = run_campaign(config, kernels=kern, check_invariants=args.check_invariants)
    written = write_outputs(result, args.out)
    if not args.quiet:
        for name, sel in result.time_avg_rmse.items():
            parts = ", ".join(f"{s}={v:.4g}" for s, v in sel.items())
            rel = result.timing[name]["relative_to_standard_pf"]
            rel_txt = f", time x{rel:.3g}" if rel is not None else ""
            ndiv = len(result.divergence[name])
            div_txt = f", diverged {ndiv}/{config.mc_runs}" if ndiv else ""
            print(f"{name}: rmse {parts}{rel_txt}{div_txt}")
        print("wrote: " + ", ".join(str(p) for p in written))
    if result.failed:
        print("error: campaign numerical failure (see divergence records)", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_channel_stats(args):
    config = load_config(args.config)
    if args.samples < 1:
        raise ConfigError("--samples must be positive")
    kern = get_kernels(args.backend)
    model = build_model(config)
    profile = build_profile(config)
    diag = channel_diagnostics(
        profile, args.samples, seed=args.seed, meas_cov=model.meas_cov, kernels=kern
    )
    text = json.dumps(diag.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def _cmd_simulate(args):
    config = load_config(args.config)
    if args.runs < 1 or args.runs > config.mc_runs:
        raise ConfigError(f"--runs must be in 1..{config.mc_runs}")
    kern = get_kernels(args.backend)
    model = build_model(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    for r in range(args.runs):
        truth, events, results = run_single(config, run_index=r, kernels=kern)
        if args.trace:
            write_trace(events, out / f"trace_channel_run{r}.csv", model.meas_dim)
            np.savetxt(
                out / f"truth_run{r}.csv",
                np.column_stack([np.arange(1, config.steps + 1), truth]),
                delimiter=",",
                header="k," + ",".join(f"x{i}" for i in range(model.state_dim)),
                comments="",
            )
        for name, res in results.items():
            if isinstance(res, FilterDivergence):
                failures += 1
                print(f"run {r}: {name} diverged at step {res.step}", file=sys.stderr)
                continue
            if args.trace:
                if name == "gaf":
                    variances = np.stack([np.diag(c) for c in res.covs])
                    write_estimates(res.means, variances, out / f"estimates_{name}_run{r}.csv")
                else:
                    write_estimates(res.means, res.var, out / f"estimates_{name}_run{r}.csv")
                if name == "smc":
                    write_smc_diagnostics(res, out / f"smc_diag_run{r}.csv")
        if not args.trace:
            print(f"run {r}: completed {len(results)} filters")
    return EXIT_NUMERICAL if failures == args.runs * len(config.filters) and failures else EXIT_OK


def _cmd_backend_bench(args):
    import time

    if args.config:
        config = load_config(args.config)
    else:
        from .harness import problem1_config

        config = problem1_config()
    config = replace(config, mc_runs=max(1, args.runs))
    rows = []
    for backend in available_backends():
        kern = get_kernels(backend)
        # One throwaway campaign warms the JIT cache so compile time is
        # excluded, mirroring how the harness times filters.
        run_campaign(replace(config, mc_runs=1), kernels=kern)
        t0 = time.perf_counter()
        result = run_campaign(config, kernels=kern)
        wall = time.perf_counter() - t0
        rows.append((backend, wall, result))
    print(f"scenario: {config.model_name}, steps={config.steps}, runs={config.mc_runs}, particles={config.particles}")
    base = rows[-1][1] if len(rows) > 1 else None
    for backend, wall, result in rows:
        speed = f" ({base / wall:.2f}x vs numpy)" if base is not None and backend != "numpy" else ""
        print(f"backend {backend}: campaign {wall:.3f}s{speed}")
        for name, tinfo in result.timing.items():
            print(f"  {name}: {tinfo['per_run_s'] * 1e3:.2f} ms/run")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "benchmark":
            return _cmd_benchmark(args)
        if args.command == "channel-stats":
            return _cmd_channel_stats(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "backend-bench":
            return _cmd_backend_bench(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FilterDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
