"""Batch experiment front-end: ``run``, ``report``, and ``gradcheck``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import yaml

from .config import apply_overrides, from_dict
from .encoder import save_checkpoint
from .errors import ConfigInvalid, MissingMetrics
from .federation import RoundMetrics, run_experiment
from .gradcheck import run_all
from .reporting import comparison_table, load_run, plot_curves, write_table


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fssl-lab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one experiment from a config file")
    run_p.add_argument("--config", required=True, help="YAML config path")
    run_p.add_argument("--out", default=None, help="output directory (default: runs/<stamp>-seed<seed>)")
    run_p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path config override, repeatable")
    run_p.add_argument("--seed", type=int, default=None, help="override the config seed")

    rep_p = sub.add_parser("report", help="compare completed runs")
    rep_p.add_argument("runs", nargs="+", help="run directories")
    rep_p.add_argument("--out", default="report", help="where to write tables and plots")

    sub.add_parser("gradcheck", help="finite-difference checks for all analytic gradients")
    return p


def _cmd_run(args) -> int:
    if not os.path.isfile(args.config):
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    try:
        with open(args.config) as f:
            raw = yaml.safe_load(f) or {}
        if not isinstance(raw, dict):
            raise ConfigInvalid("config", "top level must be a mapping")
        raw = apply_overrides(raw, args.set)
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = from_dict(raw)
    except ConfigInvalid as e:
        print(f"error: invalid config: {e}", file=sys.stderr)
        return 2
    except yaml.YAMLError as e:
        print(f"error: cannot parse {args.config}: {e}", file=sys.stderr)
        return 2

    out_dir = args.out or os.path.join(
        "runs", time.strftime("%Y%m%d-%H%M%S") + f"-seed{cfg.seed}"
    )
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        print(f"error: cannot create output dir: {e}", file=sys.stderr)
        return 1

    result = run_experiment(cfg)

    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(RoundMetrics.CSV_FIELDS)
        for m in result.metrics:
            w.writerow(m.csv_row())
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(result.summary(), f, indent=2, sort_keys=True)
        f.write("\n")
    save_checkpoint(os.path.join(out_dir, "encoder_final.ckpt"), result.final_params)

    final = result.metrics[-1]
    print(f"run complete: {out_dir}")
    print(f"rounds={final.round} acc={final.acc:.4f} asr={final.asr:.4f} "
          f"target_class={result.target_class}")
    return 0


def _cmd_report(args) -> int:
    try:
        runs = [load_run(d) for d in args.runs]
    except MissingMetrics as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    table = comparison_table(runs)
    csv_path, txt_path = write_table(table, args.out)
    plots = plot_curves(runs, args.out)
    with open(txt_path) as f:
        print(f.read(), end="")
    print(f"wrote {csv_path}")
    for p in plots:
        print(f"wrote {p}")
    return 0


def _cmd_gradcheck() -> int:
    reports = run_all()
    ok = True
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<22} max_rel_err={r.max_rel_err:.3e} "
              f"threshold={r.threshold:.1e} instances={r.n_instances} "
              f"time={r.seconds:.2f}s  {status}")
        ok = ok and r.passed
    print(f"gradcheck: {'all checks passed' if ok else 'FAILURES detected'}")
    return 0 if ok else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "report":
        return _cmd_report(args)
    return _cmd_gradcheck()


if __name__ == "__main__":
    sys.exit(main())
