"""Deterministic policy evaluation from randomized throws.

Success: over the final second of the episode, mean position error below
0.2 m and mean speed below 0.5 m/s. Each episode can be exported as a CSV
trajectory (one row per control step plus the initial state; the action
column of the final row repeats the last applied action).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import sample_initial_state
from .policy import forward_np, load_policy
from .rollout import RolloutSettings, rollout

DOMAIN_EVAL = 3

SUCCESS_POS_ERR = 0.2   # m, mean over the final second
SUCCESS_SPEED = 0.5     # m/s, mean over the final second

TRAJECTORY_HEADER = ("t,px,py,pz,r11,r21,r31,r12,r22,r32,r13,r23,r33,"
                     "vx,vy,vz,c,wx,wy,wz")


@dataclass
class EvalReport:
    episodes: int
    success_rate: float
    mean_reward: float
    mean_final_pos_err: float
    mean_final_speed: float
    per_episode_success: np.ndarray

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "success_rate": self.success_rate,
            "mean_reward": self.mean_reward,
            "mean_final_pos_err": self.mean_final_pos_err,
            "mean_final_speed": self.mean_final_speed,
        }


def load_controller(path):
    """Load either checkpoint kind; returns (act_fn builder, meta).

    The builder takes RolloutSettings and yields a deterministic (mean)
    action function, so PPO and BPTT checkpoints evaluate identically.
    """
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
    if meta.get("kind") == "actor_critic":
        from .train_ppo import load_actor_critic, make_deterministic_act_fn
        ac, meta = load_actor_critic(path)

        def build(s: RolloutSettings):
            return make_deterministic_act_fn(ac, s)
        return build, meta
    params, meta = load_policy(path)

    def build(s: RolloutSettings):
        def act(obs):
            return forward_np(params, obs, c_max=s.dyn.c_max,
                              omega_max=s.dyn.omega_max), {}
        return act
    return build, meta


def evaluate(act_fn, s: RolloutSettings, init_cfg, episodes: int, seed: int,
             out_dir=None, write_trajectories: bool = False) -> EvalReport:
    """Roll ``episodes`` deterministic episodes in one batch and score them."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(
        seed, spawn_key=(DOMAIN_EVAL,)))
    init = sample_initial_state(rng, init_cfg, episodes, s.dyn.delay_steps)
    batch = rollout(act_fn, init, s, rng=rng)
    last = max(1, int(round(1.0 / s.dyn.dt)))
    goal = s.rew.goal
    tail = batch.x[-last:]
    pos_err = np.linalg.norm(tail[:, :, 0:3] - goal, axis=2).mean(axis=0)
    speed = np.linalg.norm(tail[:, :, 12:15], axis=2).mean(axis=0)
    success = (pos_err < SUCCESS_POS_ERR) & (speed < SUCCESS_SPEED)
    report = EvalReport(
        episodes=episodes,
        success_rate=float(success.mean()),
        mean_reward=float(batch.episode_rewards().mean()),
        mean_final_pos_err=float(pos_err.mean()),
        mean_final_speed=float(speed.mean()),
        per_episode_success=success,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_summary.json").write_text(
            json.dumps(report.to_dict(), indent=2) + "\n")
        if write_trajectories:
            for e in range(episodes):
                write_trajectory(out / f"trajectory_{e:03d}.csv", batch, e,
                                 s.dyn.dt)
    return report


def write_trajectory(path, batch, episode: int, dt: float) -> None:
    n = batch.horizon
    rows = []
    for t in range(n + 1):
        u = batch.u[min(t, n - 1), episode]
        state = batch.x[t, episode]
        rows.append(",".join([f"{t * dt:.6f}"]
                             + [f"{v:.9g}" for v in state]
                             + [f"{v:.9g}" for v in u]))
    Path(path).write_text(TRAJECTORY_HEADER + "\n" + "\n".join(rows) + "\n")
