"""Shared batched rollout: one stepping/observation/reward code path used by
the BPTT trainer, the PPO collector, evaluation and the benchmark harness.

Episodes are fixed horizon with no early termination. Environments whose
state leaves the sanity box are flagged, frozen at their last valid state and
given a floor reward for the remaining steps; the run continues.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3
from .autodiff import Eager
from .dynamics import (Action, DynamicsParams, FullModelState, U_HOVER,
                       clip_action, full_step, simple_step)
from .observation import (CameraParams, ObservationBuffer,
                          build_feature_observation)
from .reward import RewardParams, step_reward

_EAGER = Eager()


@dataclass
class RolloutSettings:
    task: str = "state"            # "state" | "features"
    model_mode: str = "full"       # forward model: "simple" | "full"
    horizon: int = 250
    dyn: DynamicsParams = field(default_factory=DynamicsParams)
    rew: RewardParams = field(default_factory=RewardParams)
    cam: CameraParams | None = None
    layout: np.ndarray | None = None
    blowup_limit: float = 1e3
    reward_floor: float = -100.0

    def obs_dim(self) -> int:
        return 15 if self.task == "state" else 82


@dataclass
class RolloutBatch:
    """Recorded fixed-horizon trajectories for a batch of environments."""

    x: np.ndarray          # (N+1, B, 15) flat core states
    u: np.ndarray          # (N, B, 4) applied actions
    u_mask: np.ndarray     # (N, B, 4) in-bounds masks (straight-through clip)
    obs: np.ndarray        # (N, B, D)
    obs_final: np.ndarray  # (B, D)
    rewards: np.ndarray    # (N, B), floor applied to dead environments
    alive: np.ndarray      # (N, B) 1.0 while the (x_t, u_t) pair is valid
    pix_noise: np.ndarray | None  # (N, B*K, 2) recorded pixel noise or None
    task: str
    model_mode: str
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.u.shape[0]

    @property
    def batch(self) -> int:
        return self.u.shape[1]

    def episode_rewards(self) -> np.ndarray:
        return self.rewards.sum(axis=0)

    def samples(self) -> int:
        return self.horizon * self.batch


def rollout(act_fn, init: FullModelState, s: RolloutSettings,
            rng: np.random.Generator | None = None) -> RolloutBatch:
    """Roll ``act_fn`` through ``s.horizon`` steps from ``init``.

    ``act_fn(obs) -> (u_raw, extras)`` maps a (B, D) observation batch to
    (B, 4) actions plus a dict of per-step arrays to record (used by PPO for
    samples, log-probs and values). The forward model follows
    ``s.model_mode``; recording is identical for both so the backward pass
    can consume either.
    """
    full = s.model_mode == "full"
    if s.model_mode not in ("simple", "full"):
        raise ValueError(f"unknown model mode: {s.model_mode!r}")
    state = init.copy()
    bsz = state.batch
    n = s.horizon
    features = s.task == "features"
    if features and (s.cam is None or s.layout is None):
        raise ValueError("feature task requires camera and layout settings")
    k = s.layout.shape[0] if features else 0
    want_noise = features and s.cam.noise_std > 0.0 and rng is not None

    x = np.empty((n + 1, bsz, 15))
    u = np.empty((n, bsz, 4))
    u_mask = np.empty((n, bsz, 4))
    obs = np.empty((n, bsz, s.obs_dim()))
    rewards = np.empty((n, bsz))
    alive_rec = np.empty((n, bsz))
    pix_noise = np.empty((n, bsz * k, 2)) if want_noise else None

    buffer = ObservationBuffer()
    prev_u = np.tile(U_HOVER, (bsz, 1))
    alive = np.ones(bsz, dtype=bool)
    extras_acc: dict[str, list] = {}

    for t in range(n):
        core = state.core
        x[t] = core.flatten()
        if features:
            if want_noise:
                pix_noise[t] = s.cam.noise_std * rng.standard_normal((bsz * k, 2))
                noise_t = pix_noise[t]
            else:
                noise_t = None
            obs[t] = build_feature_observation(
                _EAGER, buffer, s.cam, s.layout, core.p,
                so3.mat_to_vec9(core.r), prev_u, noise=noise_t)
        else:
            obs[t] = x[t]
        u_raw, extras = act_fn(obs[t])
        for key, val in extras.items():
            extras_acc.setdefault(key, []).append(val)
        action, mask = clip_action(Action.from_matrix(u_raw), s.dyn)
        u[t] = action.as_matrix()
        u_mask[t] = mask
        omega_pen = state.omega_act if full else action.omega
        r = step_reward(core.p, core.v, u[t], prev_u, omega_pen, s.rew)
        rewards[t] = np.where(alive, r, s.reward_floor)
        alive_rec[t] = alive

        if full:
            nxt = full_step(state, action, s.dyn)
        else:
            nxt = FullModelState(simple_step(core, action, s.dyn.dt),
                                 state.omega_act, state.c_act, state.cmd_queue)
        bad = np.max(np.abs(nxt.core.flatten()), axis=1) > s.blowup_limit
        frozen = ~(alive & ~bad)
        if np.any(frozen):
            nxt.core.p[frozen] = core.p[frozen]
            nxt.core.r[frozen] = core.r[frozen]
            nxt.core.v[frozen] = core.v[frozen]
            nxt.omega_act[frozen] = state.omega_act[frozen]
            nxt.c_act[frozen] = state.c_act[frozen]
            if nxt.cmd_queue.shape[0] > 0:
                nxt.cmd_queue[:, frozen] = state.cmd_queue[:, frozen]
            alive = alive & ~bad
        state = nxt
        prev_u = u[t]

    x[n] = state.core.flatten()
    if features:
        obs_final = build_feature_observation(
            _EAGER, buffer, s.cam, s.layout, state.core.p,
            so3.mat_to_vec9(state.core.r), prev_u, noise=None)
    else:
        obs_final = x[n].copy()

    extras_out = {key: np.stack(vals) for key, vals in extras_acc.items()}
    return RolloutBatch(x=x, u=u, u_mask=u_mask, obs=obs, obs_final=obs_final,
                        rewards=rewards, alive=alive_rec, pix_noise=pix_noise,
                        task=s.task, model_mode=s.model_mode, extras=extras_out)

