"""Throughput harness: environment-steps per wall second for forward-only
rollouts, BPTT with the surrogate backward model, and BPTT differentiated
through the full model, across environment counts.

The timed code paths are the exact library functions the trainers call; the
harness adds nothing but clocks. Full-backward cells whose tape would not
fit in memory are reported as unavailable instead of crashing the sweep.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dynamics import sample_initial_state
from .policy import MlpParams, forward_np
from .rollout import RolloutSettings, rollout
from .train_bptt import bptt_gradient, bptt_gradient_full

MODES = ("rollout", "bptt-simple", "bptt-full")

# rough per-substep tape footprint in floats per environment (state values
# plus same again for adjoints during backward)
_FULL_TAPE_FLOATS_PER_SUBSTEP = 130


@dataclass
class BenchResult:
    envs: int
    mode: str
    steps_per_sec: float
    reps: int
    std: float
    available: bool = True
    note: str = ""


def estimate_full_tape_bytes(envs: int, horizon: int, substeps: int) -> int:
    return int(envs * horizon * substeps * _FULL_TAPE_FLOATS_PER_SUBSTEP * 8)


def run_bench(params: MlpParams, s: RolloutSettings, env_counts, modes=MODES,
              reps: int = 3, warmup: int = 1, seed: int = 0,
              mem_cap_bytes: int = 3_000_000_000,
              init_cfg=None) -> list[BenchResult]:
    """Median-of-repetitions steps/second per (env count, mode) cell."""
    if reps < 3:
        raise ValueError("need at least 3 repetitions")
    results = []
    substeps = max(1, int(round(s.dyn.dt / s.dyn.substep_dt)))
    for bsz in env_counts:
        for mode in modes:
            if mode not in MODES:
                raise ValueError(f"unknown bench mode: {mode!r}")
            if mode == "bptt-full":
                est = estimate_full_tape_bytes(bsz, s.horizon, substeps)
                if est > mem_cap_bytes:
                    results.append(BenchResult(bsz, mode, 0.0, 0, 0.0, False,
                                               f"tape estimate {est/1e9:.1f} GB "
                                               f"over cap"))
                    continue
            times = []
            try:
                for rep in range(warmup + reps):
                    rng = np.random.default_rng(
                        np.random.SeedSequence(seed, spawn_key=(7, bsz, rep)))
                    init = sample_initial_state(rng, init_cfg or _bench_init(),
                                                bsz, s.dyn.delay_steps)
                    t0 = time.perf_counter()
                    if mode == "rollout":
                        rollout(lambda o: (forward_np(params, o), {}), init, s,
                                rng=rng)
                    elif mode == "bptt-simple":
                        batch = rollout(lambda o: (forward_np(params, o), {}),
                                        init, s, rng=rng)
                        bptt_gradient(batch, params, s)
                    else:
                        bptt_gradient_full(params, init, s)
                    if rep >= warmup:
                        times.append(time.perf_counter() - t0)
            except MemoryError:
                results.append(BenchResult(bsz, mode, 0.0, 0, 0.0, False,
                                           "out of memory"))
                continue
            sps = bsz * s.horizon / np.asarray(times)
            results.append(BenchResult(bsz, mode, float(np.median(sps)),
                                       reps, float(np.std(sps))))
    return results


def _bench_init():
    from .dynamics import InitStateParams
    return InitStateParams()


def format_table(results: list[BenchResult]) -> str:
    """Plain-text table shaped env-count rows by mode columns."""
    counts = sorted({r.envs for r in results})
    modes = [m for m in MODES if any(r.mode == m for r in results)]
    by_key = {(r.envs, r.mode): r for r in results}
    width = 16
    lines = ["Steps per second (median of repetitions)"]
    header = f"{'envs':>8} |" + "".join(f"{m:>{width}}" for m in modes)
    lines.append(header)
    lines.append("-" * len(header))
    for c in counts:
        cells = []
        for m in modes:
            r = by_key.get((c, m))
            if r is None:
                cells.append(f"{'':>{width}}")
            elif not r.available:
                cells.append(f"{'-':>{width}}")
            else:
                cells.append(f"{r.steps_per_sec:>{width},.0f}")
        lines.append(f"{c:>8} |" + "".join(cells))
    return "\n".join(lines)


def to_csv(results: list[BenchResult]) -> str:
    lines = ["envs,mode,steps_per_sec,reps,std,available,note"]
    for r in results:
        lines.append(f"{r.envs},{r.mode},{r.steps_per_sec:.3f},{r.reps},"
                     f"{r.std:.3f},{int(r.available)},{r.note}")
    return "\n".join(lines) + "\n"
