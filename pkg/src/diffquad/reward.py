"""Stabilization reward: weighted Huber penalties on position error, velocity,
body rates, hover-action deviation and action change. Always <= 0, zero only
at perfect hover with a constant hover action.

The Huber loss is applied elementwise and summed over components, which keeps
the gradient of every term bounded by weight * inner_scale * delta per axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Eager
from .dynamics import U_HOVER, Action, QuadState

_EAGER = Eager()


@dataclass
class RewardParams:
    p_des: tuple[float, float, float] = (0.0, 0.0, 1.0)
    w_pos: float = 0.2
    pos_scale: float = 5.0
    w_vel: float = 0.1
    w_omega: float = 0.1
    w_act: float = 0.5
    w_act_diff: float = 0.01
    huber_delta: float = 1.0

    @property
    def goal(self) -> np.ndarray:
        return np.asarray(self.p_des, dtype=np.float64)


def huber_elements(x: np.ndarray, delta: float) -> np.ndarray:
    """Elementwise Huber: 0.5 z^2 inside |z| <= delta, delta(|z| - delta/2) outside."""
    ax = np.abs(x)
    return np.where(ax <= delta, 0.5 * x * x, delta * (ax - 0.5 * delta))


def huber(x, delta: float) -> float:
    """Summed Huber loss of a vector (or scalar)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return float(np.sum(huber_elements(np.asarray(x, dtype=np.float64), delta)))


def step_reward(p: np.ndarray, v: np.ndarray, u: np.ndarray, u_prev: np.ndarray,
                omega: np.ndarray, params: RewardParams) -> np.ndarray:
    """Per-environment reward for one step; all inputs batched (B, .)."""
    consts = RewardConsts(_EAGER, p.shape[0], params)
    return reward_env(_EAGER, p, v, u, u_prev, omega, params, consts)


def reward(state: QuadState, action: Action, prev_action: Action,
           omega: np.ndarray, params: RewardParams) -> np.ndarray:
    """Reward of a batched state/action pair; ``omega`` is the rate penalty
    input (commanded rates in simple-model rollouts, actual rates in
    full-model rollouts)."""
    return step_reward(state.p, state.v, action.as_matrix(),
                       prev_action.as_matrix(), np.asarray(omega), params)


class RewardConsts:
    """Per-batch constant handles shared by every step of a taped rollout."""

    def __init__(self, ops, batch: int, params: RewardParams):
        self.p_des = ops.const(np.broadcast_to(params.goal, (batch, 3)).copy())
        self.u_hover = ops.const(np.broadcast_to(U_HOVER, (batch, 4)).copy())
        self.weights = ops.const(np.concatenate([
            np.full(3, -params.w_pos),
            np.full(3, -params.w_vel),
            np.full(3, -params.w_omega),
            np.full(4, -params.w_act),
            np.full(4, -params.w_act_diff),
        ]))


def reward_env(ops, p, v, u, u_prev, omega, params: RewardParams,
               consts: RewardConsts):
    """Per-environment reward as a (B,) graph handle.

    All penalty inputs are stacked into one (B, 17) error block so a single
    elementwise Huber and one weighted contraction cover every term. Written
    against the shared ops interface; on a Tape it contributes exact reward
    gradients to the backward pass.
    """
    err = ops.concat([
        ops.smul(ops.sub(p, consts.p_des), params.pos_scale),
        v,
        omega,
        ops.sub(u, consts.u_hover),
        ops.sub(u, u_prev),
    ], axis=1)
    return ops.matvec(ops.huber(err, params.huber_delta), consts.weights)
