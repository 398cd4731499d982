"""Comparison tables and SVG plots over completed run directories."""
from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import MissingMetrics

METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"


def load_run(run_dir: str) -> dict:
    """Metrics rows plus summary for one run directory."""
    mpath = os.path.join(run_dir, METRICS_FILE)
    if not os.path.isfile(mpath):
        raise MissingMetrics(f"{run_dir}: no {METRICS_FILE}")
    with open(mpath, newline="") as f:
        rows = list(csv.DictReader(f))
    summary = {}
    spath = os.path.join(run_dir, SUMMARY_FILE)
    if os.path.isfile(spath):
        with open(spath) as f:
            summary = json.load(f)
    return {"dir": run_dir, "name": os.path.basename(os.path.normpath(run_dir)),
            "rows": rows, "summary": summary}


def _num(row: dict, key: str):
    v = row.get(key, "")
    return float(v) if v not in ("", None) else None


def comparison_table(runs: list[dict]) -> list[dict]:
    """One row per run: mu, final ACC/ASR; sorted by (mu, name)."""
    out = []
    for run in runs:
        last = run["rows"][-1]
        mu = run["summary"].get("config", {}).get("attack", {}).get("mu")
        out.append({
            "run": run["name"],
            "mu": mu if mu is not None else "",
            "rounds": int(last["round"]),
            "acc": _num(last, "acc"),
            "asr": _num(last, "asr"),
        })
    out.sort(key=lambda r: (r["mu"] if isinstance(r["mu"], (int, float)) else -1.0, r["run"]))
    return out


def write_table(table: list[dict], out_dir: str) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "comparison.csv")
    with open(csv_path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["run", "mu", "rounds", "acc", "asr"])
        w.writeheader()
        w.writerows(table)
    txt_path = os.path.join(out_dir, "comparison.txt")
    with open(txt_path, "w") as f:
        f.write(f"{'run':<40} {'mu':>6} {'rounds':>7} {'acc':>8} {'asr':>8}\n")
        for r in table:
            acc = f"{r['acc']:.4f}" if r["acc"] is not None else "-"
            asr = f"{r['asr']:.4f}" if r["asr"] is not None else "-"
            f.write(f"{r['run']:<40} {str(r['mu']):>6} {r['rounds']:>7} {acc:>8} {asr:>8}\n")
    return csv_path, txt_path


def plot_curves(runs: list[dict], out_dir: str) -> list[str]:
    """ACC/ASR vs round for all runs, plus persistence curves where present."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    for metric in ("acc", "asr"):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for run in runs:
            xs = [int(r["round"]) for r in run["rows"]]
            ys = [_num(r, metric) for r in run["rows"]]
            ax.plot(xs, ys, label=run["name"], linewidth=1.2)
        ax.set_xlabel("round")
        ax.set_ylabel(metric.upper())
        ax.set_ylim(-0.02, 1.02)
        ax.legend(fontsize=7)
        ax.grid(alpha=0.3)
        path = os.path.join(out_dir, f"{metric}_vs_round.svg")
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)

    persist_runs = [r for r in runs if r["summary"].get("persistence")]
    if persist_runs:
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for run in persist_runs:
            pts = run["summary"]["persistence"]
            xs = [p["round"] for p in pts]
            ys = [p["retention_pct"] for p in pts]
            ax.plot(xs, ys, marker="o", label=run["name"], linewidth=1.2)
        ax.set_xlabel("round")
        ax.set_ylabel("retention of peak ASR (%)")
        ax.legend(fontsize=7)
        ax.grid(alpha=0.3)
        path = os.path.join(out_dir, "persistence.svg")
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    return written
