"""Policy training by backpropagation through time.

The forward rollout can use either quadrotor model; the backward graph is
rebuilt from the recorded (state, action) pairs with the simple model's
analytic Jacobians injected at every transition, so the gradient is a pure
function of the recorded batch no matter which model produced it. A fully
taped variant that differentiates through every 1 kHz substep of the full
model is kept for the ablation and throughput comparisons.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import so3
from .autodiff import Tape, inject_jacobian
from .dynamics import (Action, FullModelState, QuadState, U_HOVER,
                       full_step_taped, sample_initial_state,
                       simple_step_jacobians)
from .observation import ObservationBuffer, build_feature_observation
from .policy import (AdamParams, AdamState, MlpArch, MlpParams, adam_step,
                     forward_from_handles, forward_np, global_norm,
                     init_params, param_handles, save_policy)
from .reward import RewardConsts, reward_env
from .rollout import RolloutBatch, RolloutSettings, rollout

logger = logging.getLogger(__name__)

# spawn-key domains for deterministic per-iteration, per-shard seeding
DOMAIN_PARAMS = 0
DOMAIN_ROLLOUT = 1
DOMAIN_EVAL = 3


@dataclass
class TrainMetricsRecord:
    iteration: int
    reward_mean: float
    reward_std: float
    samples: int
    wall_clock_s: float
    grad_norm: float
    skipped: bool = False


@dataclass
class TrainResult:
    params: MlpParams
    metrics: list[TrainMetricsRecord]
    out_dir: str | None = None
    actor_critic: object = None  # set by the PPO trainer

    def best_reward(self) -> float:
        return max(m.reward_mean for m in self.metrics if not m.skipped)

    def final_reward(self, last: int = 10) -> float:
        vals = [m.reward_mean for m in self.metrics if not m.skipped]
        return float(np.mean(vals[-last:]))


def _apply_clip_mix(tape, u_h, mask: np.ndarray, u_rec: np.ndarray):
    """Straight-through clamp: identity inside bounds, recorded value with
    zero gradient at saturation. Skipped when nothing saturated."""
    if np.all(mask == 1.0):
        return u_h
    return tape.add(tape.mul(u_h, tape.const(mask)),
                    tape.const((1.0 - mask) * u_rec))


def bptt_gradient(batch: RolloutBatch, params: MlpParams,
                  s: RolloutSettings) -> tuple[list[np.ndarray], float]:
    """Gradient of the mean (over batch and horizon) cumulative reward.

    Rebuilds the differentiable graph from the recorded trajectories: the
    policy, observation and reward are re-taped exactly; each state
    transition is a link node carrying the simple-model Jacobians evaluated
    at the recorded pair, regardless of which model stepped forward. The
    body-rate penalty is taken from the taped commanded rates, which is the
    only rate variable the simple backward model knows about.

    Returns (grads aligned with params.flat_list(), objective value).
    """
    n, bsz = batch.horizon, batch.batch
    features = batch.task == "features"
    tape = Tape()
    handles = param_handles(params, tape, requires_grad=True)
    consts = RewardConsts(tape, bsz, s.rew)
    x = tape.leaf(batch.x[0])
    prev_u = tape.const(np.tile(U_HOVER, (bsz, 1)))
    buffer = ObservationBuffer() if features else None
    total = None
    for t in range(n):
        p = tape.slice(x, 0, 3, axis=1)
        v = tape.slice(x, 12, 15, axis=1)
        if features:
            r9 = tape.slice(x, 3, 12, axis=1)
            noise_t = batch.pix_noise[t] if batch.pix_noise is not None else None
            obs = build_feature_observation(tape, buffer, s.cam, s.layout,
                                            p, r9, prev_u, noise=noise_t)
        else:
            obs = x
        u = forward_from_handles(params.arch, handles, obs, tape,
                                 c_max=s.dyn.c_max, omega_max=s.dyn.omega_max)
        u = _apply_clip_mix(tape, u, batch.u_mask[t], batch.u[t])
        omega = tape.slice(u, 1, 4, axis=1)
        r_env = reward_env(tape, p, v, u, prev_u, omega, s.rew, consts)
        alive_t = batch.alive[t]
        if not np.all(alive_t == 1.0):
            r_env = tape.mul(r_env, tape.const(alive_t))
        total = r_env if total is None else tape.add(total, r_env)
        if t + 1 < n:
            x_next = tape.custom_link([x, u], batch.x[t + 1])
            state_t = QuadState.from_flat(batch.x[t])
            action_t = Action.from_matrix(batch.u[t])
            dx, du = simple_step_jacobians(state_t, action_t, s.dyn.dt)
            inject_jacobian(tape, x, x_next, dx)
            inject_jacobian(tape, u, x_next, du)
            x = x_next
        prev_u = u
    root = tape.smul(tape.sum(total), 1.0 / (bsz * n))
    grad_map = tape.backward(root)
    grads = [grad_map[h.node_id] for h in handles]
    return grads, float(root.value)


def bptt_gradient_full(params: MlpParams, init: FullModelState,
                       s: RolloutSettings) -> tuple[RolloutBatch, list[np.ndarray], float]:
    """Full-backward variant: the rollout itself is taped through every
    substep of the full model and differentiated end to end. Used by the
    surrogate ablation and the throughput benchmark; much heavier than
    ``rollout`` + ``bptt_gradient``."""
    if s.model_mode != "full":
        raise ValueError("full-backward gradients require the full forward model")
    n = s.horizon
    bsz = init.batch
    features = s.task == "features"
    tape = Tape()
    handles = param_handles(params, tape, requires_grad=True)
    consts = RewardConsts(tape, bsz, s.rew)

    sv = {
        "p": tape.leaf(init.core.p),
        "r9": tape.leaf(so3.mat_to_vec9(init.core.r)),
        "v": tape.leaf(init.core.v),
        "w_act": tape.leaf(init.omega_act),
        "c_act": tape.leaf(init.c_act[:, None]),
        "queue": [tape.const(init.cmd_queue[i]) for i in range(init.cmd_queue.shape[0])],
    }
    prev_u = tape.const(np.tile(U_HOVER, (bsz, 1)))
    buffer = ObservationBuffer() if features else None
    alive = np.ones(bsz, dtype=bool)

    x_rec = np.empty((n + 1, bsz, 15))
    u_rec = np.empty((n, bsz, 4))
    u_mask_rec = np.empty((n, bsz, 4))
    obs_rec = np.empty((n, bsz, s.obs_dim()))
    rewards_rec = np.empty((n, bsz))
    alive_rec = np.empty((n, bsz))

    total = None
    for t in range(n):
        x_rec[t] = np.concatenate(
            [sv["p"].value, sv["r9"].value, sv["v"].value], axis=1)
        if features:
            obs = build_feature_observation(tape, buffer, s.cam, s.layout,
                                            sv["p"], sv["r9"], prev_u)
        else:
            obs = tape.concat([sv["p"], sv["r9"], sv["v"]], axis=1)
        obs_rec[t] = obs.value
        u = forward_from_handles(params.arch, handles, obs, tape,
                                 c_max=s.dyn.c_max, omega_max=s.dyn.omega_max)
        lo = np.array([0.0, -s.dyn.omega_max, -s.dyn.omega_max, -s.dyn.omega_max])
        hi = np.array([s.dyn.c_max, s.dyn.omega_max, s.dyn.omega_max, s.dyn.omega_max])
        mask = ((u.value > lo) & (u.value < hi)).astype(np.float64)
        u = _apply_clip_mix(tape, u, mask, np.clip(u.value, lo, hi))
        u_rec[t] = u.value
        u_mask_rec[t] = mask
        r_env = reward_env(tape, sv["p"], sv["v"], u, prev_u, sv["w_act"],
                           s.rew, consts)
        rewards_rec[t] = np.where(alive, r_env.value, s.reward_floor)
        alive_rec[t] = alive
        if not np.all(alive):
            r_env = tape.mul(r_env, tape.const(alive.astype(np.float64)))
        total = r_env if total is None else tape.add(total, r_env)

        prev_vals = {k: sv[k].value for k in ("p", "r9", "v", "w_act", "c_act")}
        sv_next = full_step_taped(tape, sv, u, s.dyn)
        flat = np.concatenate(
            [sv_next["p"].value, sv_next["r9"].value, sv_next["v"].value], axis=1)
        bad = np.max(np.abs(flat), axis=1) > s.blowup_limit
        if np.any(bad & alive) or not np.all(alive):
            alive = alive & ~bad
            keep = alive.astype(np.float64)[:, None]
            for key in ("p", "r9", "v", "w_act", "c_act"):
                k_col = np.broadcast_to(keep, sv_next[key].value.shape)
                sv_next[key] = tape.add(
                    tape.mul(sv_next[key], tape.const(k_col.copy())),
                    tape.const((1.0 - k_col) * prev_vals[key]))
        sv = sv_next
        prev_u = u
    x_rec[n] = np.concatenate([sv["p"].value, sv["r9"].value, sv["v"].value], axis=1)
    if features:
        obs_final = build_feature_observation(tape, buffer, s.cam, s.layout,
                                              sv["p"], sv["r9"], prev_u).value
    else:
        obs_final = x_rec[n].copy()

    root = tape.smul(tape.sum(total), 1.0 / (bsz * n))
    grad_map = tape.backward(root)
    grads = [grad_map[h.node_id] for h in handles]
    batch = RolloutBatch(x=x_rec, u=u_rec, u_mask=u_mask_rec, obs=obs_rec,
                         obs_final=obs_final, rewards=rewards_rec,
                         alive=alive_rec, pix_noise=None, task=s.task,
                         model_mode="full")
    return batch, grads, float(root.value)


# ------------------------------------------------------------ training loop

def shard_slices(total: int, shards: int) -> list[slice]:
    """Fixed decomposition of the environment batch; independent of the
    worker count so results do not depend on parallelism."""
    shards = min(shards, total)
    base, rem = divmod(total, shards)
    out, start = [], 0
    for i in range(shards):
        size = base + (1 if i < rem else 0)
        out.append(slice(start, start + size))
        start += size
    return out


def rollout_rng(seed: int, iteration: int, shard: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(DOMAIN_ROLLOUT, iteration, shard)))


def _shard_task(params: MlpParams, s: RolloutSettings, init_cfg, backward_model: str,
                seed: int, iteration: int, shard: int, n_envs: int):
    rng = rollout_rng(seed, iteration, shard)
    init = sample_initial_state(rng, init_cfg, n_envs, s.dyn.delay_steps)
    if backward_model == "full":
        batch, grads, obj = bptt_gradient_full(params, init, s)
    else:
        def act(obs):
            return forward_np(params, obs, c_max=s.dyn.c_max,
                              omega_max=s.dyn.omega_max), {}
        batch = rollout(act, init, s, rng=rng)
        grads, obj = bptt_gradient(batch, params, s)
    return grads, batch.episode_rewards()


def train_iteration(params: MlpParams, cfg, s: RolloutSettings,
                    iteration: int, pool: ThreadPoolExecutor | None
                    ) -> tuple[list[np.ndarray], np.ndarray]:
    """One optimization step's gradient and episode rewards, sharded over the
    fixed decomposition and merged in shard order."""
    slices = shard_slices(cfg.envs, cfg.shards)
    args = [(params, s, cfg.init_state, cfg.backward_model, cfg.seed,
             iteration, k, sl.stop - sl.start) for k, sl in enumerate(slices)]
    if pool is None or len(slices) == 1:
        results = [_shard_task(*a) for a in args]
    else:
        results = list(pool.map(lambda a: _shard_task(*a), args))
    total = cfg.envs
    grads = None
    rewards = []
    for (g, ep), sl in zip(results, slices):
        w = (sl.stop - sl.start) / total
        if grads is None:
            grads = [w * gi for gi in g]
        else:
            for i, gi in enumerate(g):
                grads[i] = grads[i] + w * gi
        rewards.append(ep)
    return grads, np.concatenate(rewards)


def train(cfg, out_dir=None, initial_params: MlpParams | None = None,
          progress: bool = False) -> TrainResult:
    """Full BPTT training run per the config; writes metrics and checkpoints
    into ``out_dir`` when given. Deterministic for a fixed seed and any
    worker count."""
    from . import metrics as metrics_io
    from .config import make_arch, make_rollout_settings

    cfg = cfg.normalized()
    s = make_rollout_settings(cfg)
    arch = make_arch(cfg)
    if initial_params is not None:
        params = initial_params.copy()
        if params.arch.in_dim != arch.in_dim or params.arch.out_dim != arch.out_dim:
            raise ValueError("initial parameters do not match the task architecture")
    else:
        rng = np.random.default_rng(np.random.SeedSequence(
            cfg.seed, spawn_key=(DOMAIN_PARAMS,)))
        params = init_params(arch, rng)
    adam = AdamState.for_params(params.flat_list())

    out_path = None
    metrics_file = None
    if out_dir is not None:
        from pathlib import Path
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        metrics_file = metrics_io.metrics_path(out_path)
        metrics_file.unlink(missing_ok=True)

    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    records: list[TrainMetricsRecord] = []
    samples = 0
    consecutive_skips = 0
    t_start = time.perf_counter()
    try:
        for it in range(cfg.iterations):
            grads, episode_rewards = train_iteration(params, cfg, s, it, pool)
            samples += cfg.envs * cfg.horizon
            gnorm = global_norm(grads)
            mean_r = float(np.mean(episode_rewards))
            std_r = float(np.std(episode_rewards))
            finite = np.isfinite(mean_r) and np.isfinite(gnorm)
            if finite:
                consecutive_skips = 0
                hp = dataclasses.replace(
                    cfg.optim, lr=cfg.optim.lr_at(it, cfg.iterations))
                new_arrays = adam_step(adam, params.flat_list(),
                                       [-g for g in grads], hp)
                params.set_flat_list(new_arrays)
            else:
                consecutive_skips += 1
                logger.warning("iteration %d skipped: non-finite loss or gradient", it)
                if consecutive_skips >= 3:
                    raise RuntimeError(
                        f"aborting at iteration {it}: 3 consecutive non-finite "
                        f"iterations (reward={mean_r}, grad_norm={gnorm})")
            rec = TrainMetricsRecord(it, mean_r, std_r, samples,
                                     time.perf_counter() - t_start, gnorm,
                                     skipped=not finite)
            records.append(rec)
            if metrics_file is not None:
                metrics_io.append_record(metrics_file, metrics_io.record_dict(
                    rec.iteration, rec.reward_mean, rec.reward_std, rec.samples,
                    rec.wall_clock_s, rec.grad_norm, rec.skipped))
            if progress and (it % 10 == 0 or it == cfg.iterations - 1):
                logger.info("iter %d reward %.3f grad %.3g", it, mean_r, gnorm)
            if out_path is not None and cfg.checkpoint_every > 0 \
                    and (it + 1) % cfg.checkpoint_every == 0:
                save_policy(out_path / f"checkpoint_{it + 1:06d}.npz", params,
                            extra={"task": cfg.task, "trainer": "bptt",
                                   "iteration": it + 1},
                            rng_state={"seed": cfg.seed, "iteration": it + 1})
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    if out_path is not None:
        save_policy(out_path / "checkpoint_final.npz", params,
                    extra={"task": cfg.task, "trainer": "bptt",
                           "iteration": cfg.iterations},
                    rng_state={"seed": cfg.seed, "iteration": cfg.iterations})
    return TrainResult(params, records, str(out_path) if out_path else None)
