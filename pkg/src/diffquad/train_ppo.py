"""PPO baseline for the sample-efficiency and wall-clock comparisons.

Shares the rollout, observation and reward code with the BPTT trainer; only
the action source differs (squashed Gaussian with a state-independent
log-std) plus a value critic with the same trunk sizes. Hyperparameters are
standard PPO practice and live in the run config.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .dynamics import sample_initial_state
from .policy import (AdamParams, AdamState, MlpArch, MlpParams, adam_step,
                     forward_from_handles, forward_np, global_norm,
                     init_params, param_handles, squash_np)
from .rollout import RolloutBatch, RolloutSettings, rollout
from .train_bptt import TrainMetricsRecord, TrainResult, shard_slices

logger = logging.getLogger(__name__)

DOMAIN_PPO_ROLLOUT = 2
DOMAIN_PPO_UPDATE = 4

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ActorCritic:
    actor: MlpParams     # linear head: pre-squash action mean
    log_std: np.ndarray  # (1, 4) state-independent log standard deviation
    critic: MlpParams    # linear scalar head

    def flat_list(self) -> list[np.ndarray]:
        return self.actor.flat_list() + [self.log_std] + self.critic.flat_list()

    def set_flat_list(self, arrays: list[np.ndarray]) -> None:
        na = 2 * len(self.actor.weights)
        self.actor.set_flat_list(arrays[:na])
        self.log_std = arrays[na]
        self.critic.set_flat_list(arrays[na + 1:])

    def copy(self) -> "ActorCritic":
        return ActorCritic(self.actor.copy(), self.log_std.copy(), self.critic.copy())


def init_actor_critic(obs_dim: int, hidden: tuple[int, ...],
                      rng: np.random.Generator, log_std_init: float = 0.0,
                      actor_trunk: MlpParams | None = None) -> ActorCritic:
    """Fresh actor-critic; the actor's final layer is scaled down like the
    deterministic policy so initial behavior sits near hover. An optional
    pretrained trunk replaces the actor's hidden layers."""
    actor = init_params(MlpArch(obs_dim, hidden, 4, "linear"), rng)
    actor.weights[-1] = actor.weights[-1] * 0.01
    critic = init_params(MlpArch(obs_dim, hidden, 1, "linear"), rng)
    if actor_trunk is not None:
        from .pretrain import transplant
        actor = transplant(actor_trunk, actor)
    return ActorCritic(actor, np.full((1, 4), log_std_init), critic)


def gaussian_log_prob(y: np.ndarray, mean: np.ndarray,
                      log_std: np.ndarray) -> np.ndarray:
    """Closed-form diagonal Gaussian log density of pre-squash actions."""
    z = (y - mean) * np.exp(-log_std)
    return (-0.5 * (z * z) - log_std - 0.5 * LOG_2PI).sum(axis=1)


def squash_correction(y: np.ndarray, c_max: float, omega_max: float) -> np.ndarray:
    """Sum of log |du/dy| of the squash, the change-of-variables term."""
    sech2 = np.log1p(-np.tanh(y) ** 2)  # log(1 - tanh^2)
    scale = np.log(np.array([0.5 * c_max, omega_max, omega_max, omega_max]))
    return (sech2 + scale).sum(axis=1)


def log_prob_squashed(y: np.ndarray, mean: np.ndarray, log_std: np.ndarray,
                      c_max: float, omega_max: float) -> np.ndarray:
    """Log density of the squashed action evaluated at pre-squash sample y."""
    return gaussian_log_prob(y, mean, log_std) - squash_correction(y, c_max, omega_max)


def make_sampling_act_fn(ac: ActorCritic, s: RolloutSettings,
                         rng: np.random.Generator):
    """Action source for collection: sample, squash, and record the
    quantities the update needs."""
    def act(obs):
        mean = forward_np(ac.actor, obs)
        y = mean + np.exp(ac.log_std) * rng.standard_normal(mean.shape)
        u = squash_np(y, s.dyn.c_max, s.dyn.omega_max)
        logp = log_prob_squashed(y, mean, ac.log_std, s.dyn.c_max, s.dyn.omega_max)
        value = forward_np(ac.critic, obs)[:, 0]
        return u, {"y": y, "logp": logp, "value": value}
    return act


def make_deterministic_act_fn(ac: ActorCritic, s: RolloutSettings):
    """Mean-action evaluation; mechanically identical to a BPTT rollout."""
    def act(obs):
        return squash_np(forward_np(ac.actor, obs), s.dyn.c_max, s.dyn.omega_max), {}
    return act


def collect_rollouts(ac: ActorCritic, init, s: RolloutSettings,
                     rng: np.random.Generator) -> RolloutBatch:
    """Sampled rollout batch with per-step y, log-prob, value, plus the
    bootstrap value of the final observation appended to extras["value"]."""
    batch = rollout(make_sampling_act_fn(ac, s, rng), init, s, rng=rng)
    v_final = forward_np(ac.critic, batch.obs_final)[:, 0]
    batch.extras["value"] = np.concatenate(
        [batch.extras["value"], v_final[None]], axis=0)
    return batch


def gae_advantages(rewards: np.ndarray, values: np.ndarray, gamma: float,
                   lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over fixed-horizon trajectories.

    ``values`` has one more row than ``rewards``: the last row bootstraps the
    cut-off return. Returns (advantages, returns), both (N, B).
    """
    n = rewards.shape[0]
    if values.shape[0] != n + 1:
        raise ValueError("values must include the bootstrap row")
    adv = np.empty_like(rewards)
    last = np.zeros(rewards.shape[1])
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] - values[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return adv, adv + values[:-1]


def ppo_update(ac: ActorCritic, data: dict, ppo, optim: AdamParams,
               adam: AdamState, rng: np.random.Generator,
               c_max: float, omega_max: float) -> dict:
    """Clipped-surrogate update with minibatched epochs.

    ``data`` holds flattened arrays: obs (n, D), y (n, 4), logp (n,),
    adv (n,), ret (n,). Advantages are normalized per batch when configured.
    Updating stops early if the approximate KL to the collection policy
    exceeds the configured limit.
    """
    n = data["obs"].shape[0]
    adv = data["adv"]
    if ppo.normalize_adv:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    corr = squash_correction(data["y"], c_max, omega_max)
    mb_count = min(ppo.minibatches, n)
    stats = {"pi_loss": 0.0, "v_loss": 0.0, "kl": 0.0, "updates": 0,
             "grad_norm": 0.0, "stopped_early": False}
    for _ in range(ppo.epochs):
        perm = rng.permutation(n)
        for mb in np.array_split(perm, mb_count):
            tape = Tape()
            a_handles = param_handles(ac.actor, tape, requires_grad=True)
            ls_handle = tape.leaf(ac.log_std, requires_grad=True)
            c_handles = param_handles(ac.critic, tape, requires_grad=True)
            handles = a_handles + [ls_handle] + c_handles
            m = mb.shape[0]
            obs = tape.const(data["obs"][mb])
            mean = forward_from_handles(ac.actor.arch, a_handles, obs, tape)
            ls_rep = tape.repeat_rows(ls_handle, m)
            z = tape.mul(tape.sub(tape.const(data["y"][mb]), mean),
                         tape.exp(tape.smul(ls_rep, -1.0)))
            quad = tape.sum(tape.mul(z, z), axis=1)
            ls_sum = tape.sum(ls_rep, axis=1)
            logp_new = tape.add(
                tape.add(tape.smul(quad, -0.5), tape.smul(ls_sum, -1.0)),
                tape.const((-0.5 * 4 * LOG_2PI - corr[mb])[:, None]))
            ratio = tape.exp(tape.sub(logp_new, tape.const(data["logp"][mb][:, None])))
            clipped = tape.clamp(ratio, 1.0 - ppo.clip, 1.0 + ppo.clip)
            adv_c = tape.const(adv[mb][:, None])
            surr = tape.minimum(tape.mul(ratio, adv_c), tape.mul(clipped, adv_c))
            pi_loss = tape.smul(tape.sum(surr), -1.0 / m)
            vpred = forward_from_handles(ac.critic.arch, c_handles, obs, tape)
            dv = tape.sub(vpred, tape.const(data["ret"][mb][:, None]))
            v_loss = tape.smul(tape.sum(tape.mul(dv, dv)), 1.0 / m)
            loss = tape.add(pi_loss, tape.smul(v_loss, ppo.value_coef))
            if ppo.entropy_coef != 0.0:
                ent = tape.smul(tape.sum(ls_handle), -ppo.entropy_coef)
                loss = tape.sub(loss, ent)
            grad_map = tape.backward(loss)
            grads = [grad_map[h.node_id] for h in handles]
            new_arrays = adam_step(adam, ac.flat_list(), grads, optim)
            ac.set_flat_list(new_arrays)
            kl = float(np.mean(data["logp"][mb] - logp_new.value[:, 0]))
            stats["pi_loss"] += float(pi_loss.value)
            stats["v_loss"] += float(v_loss.value)
            stats["kl"] = kl
            stats["grad_norm"] += global_norm(grads)
            stats["updates"] += 1
            if kl > ppo.kl_limit:
                stats["stopped_early"] = True
                break
        if stats["stopped_early"]:
            break
    for key in ("pi_loss", "v_loss", "grad_norm"):
        stats[key] /= max(stats["updates"], 1)
    return stats


def ppo_rng(seed: int, domain: int, iteration: int, shard: int = 0) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(domain, iteration, shard)))


def train(cfg, out_dir=None, initial_actor_trunk: MlpParams | None = None,
          progress: bool = False) -> TrainResult:
    """PPO training run writing the same metrics schema as the BPTT trainer."""
    from . import metrics as metrics_io
    from .config import make_rollout_settings
    from pathlib import Path

    cfg = cfg.normalized()
    s = make_rollout_settings(cfg)
    rng_init = ppo_rng(cfg.seed, 0, 0)
    ac = init_actor_critic(cfg.obs_dim(), tuple(cfg.hidden), rng_init,
                           cfg.ppo.log_std_init, actor_trunk=initial_actor_trunk)
    optim = AdamParams(lr=cfg.ppo.lr, grad_clip=cfg.optim.grad_clip)
    adam = AdamState.for_params(ac.flat_list())

    out_path = None
    metrics_file = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        metrics_file = metrics_io.metrics_path(out_path)
        metrics_file.unlink(missing_ok=True)

    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    slices = shard_slices(cfg.envs, cfg.shards)
    records: list[TrainMetricsRecord] = []
    samples = 0
    t_start = time.perf_counter()

    def collect_shard(args):
        iteration, k, n_envs = args
        rng = ppo_rng(cfg.seed, DOMAIN_PPO_ROLLOUT, iteration, k)
        init = sample_initial_state(rng, cfg.init_state, n_envs, s.dyn.delay_steps)
        return collect_rollouts(ac, init, s, rng)

    try:
        for it in range(cfg.iterations):
            args = [(it, k, sl.stop - sl.start) for k, sl in enumerate(slices)]
            if pool is None or len(slices) == 1:
                batches = [collect_shard(a) for a in args]
            else:
                batches = list(pool.map(collect_shard, args))
            obs_l, y_l, logp_l, adv_l, ret_l, ep_l = [], [], [], [], [], []
            for b in batches:
                adv, ret = gae_advantages(b.rewards, b.extras["value"],
                                          cfg.ppo.gamma, cfg.ppo.lam)
                d = b.obs.shape[2]
                obs_l.append(b.obs.reshape(-1, d))
                y_l.append(b.extras["y"].reshape(-1, 4))
                logp_l.append(b.extras["logp"].reshape(-1))
                adv_l.append(adv.reshape(-1))
                ret_l.append(ret.reshape(-1))
                ep_l.append(b.episode_rewards())
            data = {"obs": np.concatenate(obs_l), "y": np.concatenate(y_l),
                    "logp": np.concatenate(logp_l), "adv": np.concatenate(adv_l),
                    "ret": np.concatenate(ret_l)}
            episode_rewards = np.concatenate(ep_l)
            samples += cfg.envs * cfg.horizon
            stats = ppo_update(ac, data, cfg.ppo, optim, adam,
                               ppo_rng(cfg.seed, DOMAIN_PPO_UPDATE, it),
                               s.dyn.c_max, s.dyn.omega_max)
            rec = TrainMetricsRecord(it, float(np.mean(episode_rewards)),
                                     float(np.std(episode_rewards)), samples,
                                     time.perf_counter() - t_start,
                                     stats["grad_norm"])
            records.append(rec)
            if metrics_file is not None:
                metrics_io.append_record(metrics_file, metrics_io.record_dict(
                    rec.iteration, rec.reward_mean, rec.reward_std, rec.samples,
                    rec.wall_clock_s, rec.grad_norm, rec.skipped))
            if progress and (it % 10 == 0 or it == cfg.iterations - 1):
                logger.info("ppo iter %d reward %.3f kl %.4f", it,
                            rec.reward_mean, stats["kl"])
            if out_path is not None and cfg.checkpoint_every > 0 \
                    and (it + 1) % cfg.checkpoint_every == 0:
                save_actor_critic(out_path / f"checkpoint_{it + 1:06d}.npz", ac,
                                  extra={"task": cfg.task, "iteration": it + 1},
                                  rng_state={"seed": cfg.seed, "iteration": it + 1})
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    if out_path is not None:
        save_actor_critic(out_path / "checkpoint_final.npz", ac,
                          extra={"task": cfg.task, "iteration": cfg.iterations},
                          rng_state={"seed": cfg.seed, "iteration": cfg.iterations})
    return TrainResult(ac.actor, records, str(out_path) if out_path else None,
                       actor_critic=ac)


# --------------------------------------------------------------- checkpoint

def save_actor_critic(path, ac: ActorCritic, extra: dict | None = None,
                      rng_state: dict | None = None) -> None:
    import json
    arrays = {}
    for i, (w, b) in enumerate(zip(ac.actor.weights, ac.actor.biases)):
        arrays[f"aw{i}"] = w.astype("<f8")
        arrays[f"ab{i}"] = b.astype("<f8")
    for i, (w, b) in enumerate(zip(ac.critic.weights, ac.critic.biases)):
        arrays[f"cw{i}"] = w.astype("<f8")
        arrays[f"cb{i}"] = b.astype("<f8")
    arrays["log_std"] = ac.log_std.astype("<f8")
    meta = {
        "version": 1,
        "kind": "actor_critic",
        "actor_arch": {"in_dim": ac.actor.arch.in_dim,
                       "hidden": list(ac.actor.arch.hidden),
                       "out_dim": 4, "head": "linear"},
        "critic_arch": {"in_dim": ac.critic.arch.in_dim,
                        "hidden": list(ac.critic.arch.hidden),
                        "out_dim": 1, "head": "linear"},
        "n_actor_layers": len(ac.actor.weights),
        "n_critic_layers": len(ac.critic.weights),
        "extra": extra or {},
        "rng_state": rng_state,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_actor_critic(path) -> tuple[ActorCritic, dict]:
    import json
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("kind") != "actor_critic":
            raise ValueError("not an actor-critic checkpoint")
        aa, ca = meta["actor_arch"], meta["critic_arch"]
        actor = MlpParams(MlpArch(aa["in_dim"], tuple(aa["hidden"]), 4, "linear"),
                          [data[f"aw{i}"].astype(np.float64)
                           for i in range(meta["n_actor_layers"])],
                          [data[f"ab{i}"].astype(np.float64)
                           for i in range(meta["n_actor_layers"])])
        critic = MlpParams(MlpArch(ca["in_dim"], tuple(ca["hidden"]), 1, "linear"),
                           [data[f"cw{i}"].astype(np.float64)
                            for i in range(meta["n_critic_layers"])],
                           [data[f"cb{i}"].astype(np.float64)
                            for i in range(meta["n_critic_layers"])])
        log_std = data["log_std"].astype(np.float64)
    return ActorCritic(actor, log_std, critic), meta
