"""Training metrics: one JSON record per iteration, written as JSONL.

Wall-clock time is measured, so it is the one field excluded when comparing
runs for determinism (see ``canonical``). Everything else in a record is a
pure function of the config and seed.
"""

from __future__ import annotations

import json
from pathlib import Path

METRICS_FILE = "metrics.jsonl"

FIELDS = ("iteration", "reward_mean", "reward_std", "samples",
          "wall_clock_s", "grad_norm", "skipped")

TIMING_FIELDS = ("wall_clock_s",)


def record_dict(iteration: int, reward_mean: float, reward_std: float,
                samples: int, wall_clock_s: float, grad_norm: float,
                skipped: bool = False) -> dict:
    return {
        "iteration": int(iteration),
        "reward_mean": float(reward_mean),
        "reward_std": float(reward_std),
        "samples": int(samples),
        "wall_clock_s": float(wall_clock_s),
        "grad_norm": float(grad_norm),
        "skipped": bool(skipped),
    }


def append_record(path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")


def read_metrics(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def canonical(records: list[dict]) -> list[dict]:
    """Records with measured timing removed, for determinism comparisons."""
    return [{k: v for k, v in r.items() if k not in TIMING_FIELDS} for r in records]


def first_hit(records: list[dict], target: float) -> dict | None:
    """First iteration whose mean reward reaches ``target``; None if never."""
    for r in records:
        if not r.get("skipped") and r["reward_mean"] >= target:
            return r
    return None


def metrics_path(run_dir) -> Path:
    return Path(run_dir) / METRICS_FILE
