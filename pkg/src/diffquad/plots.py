"""Comparison exports: aligned learning-curve tables, first-hit reward-target
tables (samples and wall-clock per target, '-' when never reached), and SVG
plots of reward versus samples and versus time."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import metrics as metrics_io

DEFAULT_TARGETS = (-15.0, -11.0, -7.0, -5.3)


def load_run(run_dir) -> tuple[str, list[dict]]:
    run_dir = Path(run_dir)
    path = metrics_io.metrics_path(run_dir)
    if not path.exists():
        raise FileNotFoundError(f"no metrics in {run_dir}")
    return run_dir.name, metrics_io.read_metrics(path)


def curves_table(runs: dict[str, list[dict]]) -> list[dict]:
    rows = []
    for name, records in runs.items():
        for r in records:
            rows.append({"run": name, "iteration": r["iteration"],
                         "samples": r["samples"],
                         "wall_clock_s": r["wall_clock_s"],
                         "reward_mean": r["reward_mean"]})
    return rows


def targets_table(runs: dict[str, list[dict]],
                  targets=DEFAULT_TARGETS) -> list[dict]:
    rows = []
    for name, records in runs.items():
        for target in targets:
            hit = metrics_io.first_hit(records, target)
            rows.append({
                "run": name,
                "target": target,
                "samples": hit["samples"] if hit else "-",
                "time_s": round(hit["wall_clock_s"], 3) if hit else "-",
                "iteration": hit["iteration"] if hit else "-",
            })
    return rows


def _write_csv(path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def export_plots(run_dirs, out_dir, targets=DEFAULT_TARGETS,
                 skip_empty: bool = True) -> dict:
    """Read metrics from each run directory and emit tables plus SVG plots.

    Returns {"runs": [...], "skipped": [...], "files": [...]} so callers can
    report what was produced.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs: dict[str, list[dict]] = {}
    skipped = []
    for d in run_dirs:
        try:
            name, records = load_run(d)
        except FileNotFoundError:
            skipped.append(str(d))
            continue
        if not records:
            skipped.append(str(d))
            continue
        runs[name] = records
    files = []
    if runs:
        curves = curves_table(runs)
        _write_csv(out / "curves.csv", curves)
        files.append("curves.csv")
        _write_csv(out / "targets.csv", targets_table(runs, targets))
        files.append("targets.csv")
        for xkey, fname in (("samples", "reward_vs_samples.svg"),
                            ("wall_clock_s", "reward_vs_time.svg")):
            _plot(runs, xkey, out / fname)
            files.append(fname)
    return {"runs": sorted(runs), "skipped": skipped, "files": files}


def _plot(runs: dict[str, list[dict]], xkey: str, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, records in sorted(runs.items()):
        xs = [r[xkey] for r in records if not r.get("skipped")]
        ys = [r["reward_mean"] for r in records if not r.get("skipped")]
        ax.plot(xs, ys, label=name, linewidth=1.2)
    ax.set_xlabel("samples" if xkey == "samples" else "wall clock [s]")
    ax.set_ylabel("mean episode reward")
    ax.legend(fontsize=7)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
