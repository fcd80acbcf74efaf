"""Command-line front end.

Subcommands:

* ``run``      -- execute an SNR sweep and write the CSV table
* ``diag``     -- recompute chain diagnostics from a saved sample dump
* ``selftest`` -- run the built-in oracle battery

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
A ``--config`` file holds ``key=value`` lines (same names as the long
flags, underscores allowed) and overrides anything given on the command
line.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .harness import ConfigError, ExperimentConfig, emit_csv, emit_json, \
    read_sample_dump, run_experiment


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mimodet",
        description="MIMO detection benchmark simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment sweep")
    run.add_argument("--mod", default="qpsk",
                     choices=["qpsk", "16qam", "64qam"])
    run.add_argument("--ntx", type=int, default=4)
    run.add_argument("--nrx", type=int, default=4)
    run.add_argument("--rho", type=float, default=0.0)
    run.add_argument("--snr", default="10",
                     help="comma-separated SNR grid in dB")
    run.add_argument("--detector", default="mmse",
                     help="comma-separated detectors: mmse,mgs,ep,hmc")
    run.add_argument("--trials", type=int, default=100)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--coded", action="store_true")
    run.add_argument("--outer", type=int, default=5,
                     help="feedback passes after the initial one (coded)")
    run.add_argument("--code", default=None,
                     help="'toy6', 'regular1024', or a parity-check file")
    run.add_argument("--out", default="results.csv")
    run.add_argument("--json", default=None, help="also write a JSON mirror")
    run.add_argument("--config", default=None,
                     help="key=value file overriding the flags")
    run.add_argument("--t-scale", type=float, default=None)
    run.add_argument("--t-dof", type=float, default=None)
    run.add_argument("--cauchy-scale", type=float, default=None)
    run.add_argument("--ridge-gain", type=float, default=None)
    run.add_argument("--no-timing", action="store_true",
                     help="write NA in the seconds column (byte-stable output)")
    run.add_argument("--no-diagnostics", action="store_true")
    run.add_argument("--batch", type=int, default=None,
                     help="trials per sampler batch (default: auto)")

    diag = sub.add_parser("diag", help="diagnostics for a saved sample dump")
    diag.add_argument("dump", help="sample dump file")
    diag.add_argument("--mod", default=None,
                      choices=["qpsk", "16qam", "64qam"],
                      help="also compute the symbol-transition convergence "
                           "rate for this constellation")

    sub.add_parser("selftest", help="run the built-in oracle suites")
    return parser


def _parse_value(key, raw):
    raw = raw.strip()
    if key in ("ntx", "nrx", "trials", "seed", "outer", "batch"):
        return int(raw)
    if key in ("rho", "t_scale", "t_dof", "cauchy_scale", "ridge_gain"):
        return float(raw)
    if key in ("coded", "no_timing", "no_diagnostics"):
        return raw.lower() in ("1", "true", "yes", "on")
    return raw


def _apply_config_file(args, path):
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("config",
                                  f"{path}:{line_no}: expected key=value")
            key, _, raw = line.partition("=")
            key = key.strip().replace("-", "_")
            if not hasattr(args, key):
                raise ConfigError(key, f"{path}:{line_no}: unknown key")
            setattr(args, key, _parse_value(key, raw))


def _cmd_run(args):
    if args.config:
        _apply_config_file(args, args.config)
    cfg = ExperimentConfig(
        modulation=args.mod,
        n_tx=args.ntx,
        n_rx=args.nrx,
        rho=args.rho,
        snr_grid_db=tuple(float(s) for s in str(args.snr).split(",") if s),
        detectors=tuple(d.strip() for d in str(args.detector).split(",") if d),
        trials=args.trials,
        coded=args.coded,
        code=args.code,
        max_outer=args.outer,
        master_seed=args.seed,
        out_path=args.out,
        t_scale=args.t_scale,
        t_dof=args.t_dof,
        cauchy_scale=args.cauchy_scale,
        ridge_gain=args.ridge_gain,
        timing=not args.no_timing,
        collect_diagnostics=not args.no_diagnostics,
        batch_trials=args.batch,
    )
    cfg.validate()
    results = run_experiment(cfg)
    emit_csv(results, cfg.out_path, timing=cfg.timing)
    if args.json:
        emit_json(results, args.json, timing=cfg.timing)
    print(f"wrote {len(results)} rows to {cfg.out_path}")
    return 0


def _cmd_diag(args):
    from .constellation import build_constellation
    from .diagnostics import diagnose, ess, r_hat
    from .harness import MODULATION_ORDERS
    from .model import PriorConfig

    samples = read_sample_dump(args.dump)
    n_dims = samples.draws.shape[2]
    print(f"chains={samples.n_chains} steps={samples.n_steps} "
          f"dims={n_dims} warmup={samples.n_warmup}")
    for d in range(n_dims):
        print(f"dim {d}: ess={ess(samples, d):.1f} "
              f"r_hat={r_hat(samples, d):.4f}")
    if args.mod:
        c = build_constellation(MODULATION_ORDERS[args.mod], 0.5)
        prior = PriorConfig.for_order(c.order)
        rep = diagnose(samples, c, prior)
        print(f"overall: min ess/chain={rep.ess_per_chain:.1f} "
              f"max r_hat={rep.r_hat:.4f} conv_rate={rep.conv_rate:.4f}")
    return 0


def _cmd_selftest():
    from .selftest import run_selftest
    return 0 if run_selftest() else 1


def cli_main(argv=None):
    """Entry point returning an exit code (never raises SystemExit)."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "diag":
            return _cmd_diag(args)
        if args.command == "selftest":
            return _cmd_selftest()
        parser.print_usage()
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())
