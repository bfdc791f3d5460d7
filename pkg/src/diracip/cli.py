"""Command-line driver: ``diracip <subcommand> [--config FILE] [--out DIR] ...``.

Each subcommand writes ``<name>.csv`` (one row per measurement, every row
tagged with the config hash), ``<name>.json`` (``{experiment, config_hash,
rows, pass, checks}``) and, unless ``--no-plots``, log-log SVG plots. The exit
status is 0 when every check passes, 1 when a threshold fails and 2 when the
config or a precondition is invalid (a structured error is written to
``<name>.error.json`` and stderr).
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
import traceback

from .config import EXPERIMENTS, ConfigError, load_config
from .reports import loglog_svg, rows_to_csv, summary_json, write_text


def build_parser():
    p = argparse.ArgumentParser(prog="diracip", description="Numerical experiments for the partial-data Dirac problem.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--config", default=None, help="TOML config file (defaults are used for missing keys)")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--threads", type=int, default=None, help="BLAS/LAPACK thread limit")
        s.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the config)")
        s.add_argument("--no-plots", action="store_true", help="skip SVG plots")
        s.add_argument("--plot-timestamps", action="store_true", help="stamp plots with the current time")
    return p


def _write_artifacts(res, cfg, out, plots=True, stamp=None):
    from .recovery import write_grid

    os.makedirs(out, exist_ok=True)
    name = res.experiment
    rows = [{k: v for k, v in r.items()} for r in res.rows]
    write_text(os.path.join(out, f"{name}.csv"), rows_to_csv(rows, res.columns, cfg.hash))
    summary = summary_json(name, cfg.hash, rows, res.passed, [c.as_dict() for c in res.checks],
                           {"seed": cfg.seed, "details": res.extra} if res.extra else {"seed": cfg.seed})
    write_text(os.path.join(out, f"{name}.json"), summary)
    for fname, content in res.files.items():
        path = os.path.join(out, fname)
        if isinstance(content, tuple) and content[0] == "grid":
            write_grid(path, *content[1:])
        else:
            write_text(path, content)
    if plots:
        for pl in res.plots:
            write_text(os.path.join(out, f"{pl.name}.svg"), loglog_svg(pl, timestamp=stamp))


def _error(name, out, kind, exc):
    doc = {"experiment": name, "pass": False, "error": {"type": kind, "class": type(exc).__name__,
                                                        "message": str(exc)}}
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    try:
        write_text(os.path.join(out, f"{name}.error.json"), text)
    except OSError:
        pass
    sys.stderr.write(text)


def run(command, config=None, out="out", threads=None, seed=None, plots=True, plot_timestamps=False):
    """Run one subcommand; returns the exit status."""
    from contextlib import nullcontext

    try:
        cfg = load_config(config, command, seed)
    except (ConfigError, OSError) as exc:
        _error(command, out, "config", exc)
        return 2
    if threads is not None:
        from threadpoolctl import threadpool_limits

        ctx = threadpool_limits(limits=int(threads))
    else:
        ctx = nullcontext()
    from .experiments import run_experiment

    try:
        with ctx:
            res = run_experiment(cfg)
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        _error(command, out, "precondition", exc)
        traceback.print_exc(file=sys.stderr)
        return 2
    stamp = datetime.datetime.now().isoformat(timespec="seconds") if plot_timestamps else None
    _write_artifacts(res, cfg, out, plots, stamp)
    for c in res.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.6g} ({c.threshold})")
    print(f"{command}: {'pass' if res.passed else 'FAIL'}  [{cfg.hash[:12]}]")
    return 0 if res.passed else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.out, args.threads, args.seed, not args.no_plots, args.plot_timestamps)


if __name__ == "__main__":
    sys.exit(main())
