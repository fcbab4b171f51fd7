"""Quadrotor models: the differentiable simple model, its analytic step
Jacobians, the forward-only full model with actuator lag / drag / command
delay, and the randomized initial-state ("throw") sampler.

All states are batched with a leading environment axis. The flat state layout
is x = [p, vec(R), v] with column-major vec(R), 15 entries per environment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3

GRAVITY = 9.81
G_VEC = np.array([0.0, 0.0, -GRAVITY])

# Action that exactly cancels gravity for a level vehicle.
U_HOVER = np.array([GRAVITY, 0.0, 0.0, 0.0])


@dataclass
class DynamicsParams:
    """Physical and discretization constants, all overridable from the run config."""

    dt: float = 0.02              # control period, s (50 Hz)
    substep_dt: float = 0.001     # full-model integration step, s (1 kHz)
    tau_c: float = 0.03           # thrust first-order lag, s
    tau_omega: float = 0.05       # body-rate tracking lag, s
    drag: float = 0.3             # linear drag coefficient, 1/s
    delay_steps: int = 1          # command transmission delay, control steps
    c_max: float = 2.0 * GRAVITY  # thrust ceiling, m/s^2
    omega_max: float = 5.0        # body-rate ceiling, rad/s


@dataclass
class InitStateParams:
    """Support of the randomized initial condition; difficulty scales all extents."""

    difficulty: float = 1.0
    pos_xy: float = 1.0          # +/- box half-width, m
    pos_z_low: float = 0.8
    pos_z_high: float = 1.5
    max_speed: float = 3.0       # velocity ball radius, m/s
    max_tilt_deg: float = 60.0
    max_body_rate: float = 2.0   # full-model omega_act ball radius, rad/s


@dataclass
class Action:
    """Mass-normalized collective thrust plus desired body rates, u = [c, w]."""

    c: np.ndarray      # (B,)
    omega: np.ndarray  # (B, 3)

    @classmethod
    def hover(cls, n: int) -> "Action":
        return cls(np.full(n, GRAVITY), np.zeros((n, 3)))

    @classmethod
    def from_matrix(cls, u: np.ndarray) -> "Action":
        u = np.asarray(u, dtype=np.float64)
        return cls(u[:, 0].copy(), u[:, 1:4].copy())

    def as_matrix(self) -> np.ndarray:
        return np.concatenate([self.c[:, None], self.omega], axis=1)

    @property
    def batch(self) -> int:
        return self.c.shape[0]


@dataclass
class QuadState:
    """Position, body-to-world rotation, and linear velocity, world frame."""

    p: np.ndarray  # (B, 3)
    r: np.ndarray  # (B, 3, 3)
    v: np.ndarray  # (B, 3)

    @classmethod
    def hover(cls, n: int, height: float = 1.0) -> "QuadState":
        p = np.zeros((n, 3))
        p[:, 2] = height
        return cls(p, np.broadcast_to(np.eye(3), (n, 3, 3)).copy(), np.zeros((n, 3)))

    @property
    def batch(self) -> int:
        return self.p.shape[0]

    def flatten(self) -> np.ndarray:
        """(B, 15) flat layout [p, vec(R), v]."""
        return np.concatenate([self.p, so3.mat_to_vec9(self.r), self.v], axis=1)

    @classmethod
    def from_flat(cls, x: np.ndarray) -> "QuadState":
        x = np.asarray(x, dtype=np.float64)
        return cls(x[:, 0:3].copy(), so3.vec9_to_mat(x[:, 3:12]), x[:, 12:15].copy())

    def copy(self) -> "QuadState":
        return QuadState(self.p.copy(), self.r.copy(), self.v.copy())


@dataclass
class FullModelState:
    """Full-model state: kinematic core plus actuator internals and the
    FIFO of delayed commands (oldest first, fixed length = delay_steps)."""

    core: QuadState
    omega_act: np.ndarray  # (B, 3) actual body rates
    c_act: np.ndarray      # (B,) actual mass-normalized thrust
    cmd_queue: np.ndarray  # (delay_steps, B, 4)

    @classmethod
    def at_rest(cls, core: QuadState, delay_steps: int) -> "FullModelState":
        n = core.batch
        queue = np.tile(U_HOVER, (delay_steps, n, 1))
        return cls(core, np.zeros((n, 3)), np.full(n, GRAVITY), queue)

    @property
    def batch(self) -> int:
        return self.core.batch

    def copy(self) -> "FullModelState":
        return FullModelState(self.core.copy(), self.omega_act.copy(),
                              self.c_act.copy(), self.cmd_queue.copy())


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite value in state or action")


def clip_action(action: Action, params: DynamicsParams) -> tuple[Action, np.ndarray]:
    """Clamp an action into bounds; also returns the (B, 4) in-bounds mask used
    for straight-through gradient handling (1 inside, 0 at saturation)."""
    u = action.as_matrix()
    lo = np.array([0.0, -params.omega_max, -params.omega_max, -params.omega_max])
    hi = np.array([params.c_max, params.omega_max, params.omega_max, params.omega_max])
    mask = ((u > lo) & (u < hi)).astype(np.float64)
    clipped = np.clip(u, lo, hi)
    return Action.from_matrix(clipped), mask


def simple_step(state: QuadState, action: Action, dt: float,
                renormalize: bool = True) -> QuadState:
    """One control-period step of the simple model.

    Semi-implicit Euler on translation (velocity first, position with the new
    velocity), exact exponential map on rotation. ``renormalize=False`` gives
    the raw smooth map that the analytic Jacobians differentiate.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    _check_finite(state.p, state.r, state.v, action.c, action.omega)
    thrust = action.c[:, None] * state.r[:, :, 2]
    v2 = state.v + (thrust + G_VEC) * dt
    p2 = state.p + v2 * dt
    r2 = state.r @ so3.exp_so3(action.omega * dt)
    if renormalize:
        r2 = so3.orthonormalize(r2)
    return QuadState(p2, r2, v2)


def simple_step_jacobians(state: QuadState, action: Action,
                          dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians of the raw simple step.

    Returns (dx, du) with shapes (B, 15, 15) and (B, 15, 4) in the flat
    [p, vec(R), v] layout. The end-of-step re-orthonormalization is treated
    as identity (its per-step correction is at float rounding level).
    """
    _check_finite(state.p, state.r, state.v, action.c, action.omega)
    bsz = state.batch
    r = state.r
    c = action.c
    w = action.omega * dt
    e = so3.exp_so3(w)
    eye3 = np.eye(3)

    dx = np.zeros((bsz, 15, 15))
    du = np.zeros((bsz, 15, 4))

    # translation rows: p' = p + v' dt, v' = v + (c R e3 + g) dt
    dx[:, 0:3, 0:3] = eye3
    dx[:, 0:3, 12:15] = dt * eye3
    dx[:, 12:15, 12:15] = eye3
    for i in range(3):
        # d/dR[i,2]: column-major vec index 6+i, flat index 9+i
        dx[:, 12 + i, 9 + i] = dt * c
        dx[:, i, 9 + i] = dt * dt * c
    thrust_dir = r[:, :, 2]
    du[:, 12:15, 0] = dt * thrust_dir
    du[:, 0:3, 0] = dt * dt * thrust_dir

    # rotation rows: R' = R E(w);  d vec(R')/d vec(R) = E^T (x) I3
    dx[:, 3:12, 3:12] = np.einsum("bkc,rs->bcrks", e, eye3).reshape(bsz, 9, 9)
    # d vec(R')/d omega = dt * (I3 (x) R) d vec(E)/d w, assembled blockwise
    dexp = so3.dexp_so3(w).reshape(bsz, 3, 3, 3)  # axes: (col j, row k, w)
    dr_dw = np.einsum("bik,bjkw->bjiw", r, dexp).reshape(bsz, 9, 3)
    du[:, 3:12, 1:4] = dt * dr_dw

    return dx, du


def full_step(state: FullModelState, action: Action,
              params: DynamicsParams) -> FullModelState:
    """One control period of the full model.

    Pops the oldest queued command and enqueues the new action, then
    integrates at the substep rate: exact first-order lag on thrust and body
    rates, linear drag on translation, exponential-map rotation with the
    actual body rates. Re-orthonormalizes once per control step.
    """
    _check_finite(state.core.p, state.core.r, state.core.v,
                  state.omega_act, state.c_act, action.c, action.omega)
    u_new = action.as_matrix()
    if state.cmd_queue.shape[0] > 0:
        u_exec = state.cmd_queue[0]
        queue = np.concatenate([state.cmd_queue[1:], u_new[None]], axis=0)
    else:
        u_exec = u_new
        queue = state.cmd_queue
    c_cmd = u_exec[:, 0]
    w_cmd = u_exec[:, 1:4]

    n_sub = max(1, int(round(params.dt / params.substep_dt)))
    sub = params.dt / n_sub
    alpha_c = np.exp(-sub / params.tau_c)
    alpha_w = np.exp(-sub / params.tau_omega)

    p, r, v = state.core.p, state.core.r, state.core.v
    c_act, w_act = state.c_act, state.omega_act
    for _ in range(n_sub):
        # exact first-order lag update, stable for arbitrarily small tau
        c_act = c_cmd * (1.0 - alpha_c) + c_act * alpha_c
        w_act = w_cmd * (1.0 - alpha_w) + w_act * alpha_w
        accel = c_act[:, None] * r[:, :, 2] + G_VEC - params.drag * v
        v = v + accel * sub
        p = p + v * sub
        r = r @ so3.exp_so3(w_act * sub)
    r = so3.orthonormalize(r)
    return FullModelState(QuadState(p, r, v), w_act, np.maximum(c_act, 0.0), queue)


def full_step_taped(tape, sv: dict, action_var, params: DynamicsParams) -> dict:
    """Taped mirror of ``full_step`` for end-to-end differentiation.

    ``sv`` maps {"p", "r9", "v", "w_act", "c_act"} to tape Vars plus "queue",
    a list of (B, 4) action Vars, oldest first. Returns the advanced dict.
    The arithmetic tracks full_step expression-for-expression so forward
    values agree with the untaped model.
    """
    bsz = sv["p"].value.shape[0]
    queue = sv["queue"]
    if len(queue) > 0:
        u_exec = queue[0]
        queue = queue[1:] + [action_var]
    else:
        u_exec = action_var
    c_cmd = tape.slice(u_exec, 0, 1, axis=1)   # (B, 1)
    w_cmd = tape.slice(u_exec, 1, 4, axis=1)   # (B, 3)

    n_sub = max(1, int(round(params.dt / params.substep_dt)))
    sub = params.dt / n_sub
    alpha_c = float(np.exp(-sub / params.tau_c))
    alpha_w = float(np.exp(-sub / params.tau_omega))

    g_const = tape.const(np.broadcast_to(G_VEC, (bsz, 3)).copy())
    zeros2 = tape.const(np.zeros((bsz, 2)))

    p, r9, v = sv["p"], sv["r9"], sv["v"]
    c_act, w_act = sv["c_act"], sv["w_act"]
    for _ in range(n_sub):
        c_act = tape.add(tape.smul(c_cmd, 1.0 - alpha_c), tape.smul(c_act, alpha_c))
        w_act = tape.add(tape.smul(w_cmd, 1.0 - alpha_w), tape.smul(w_act, alpha_w))
        thrust_vec = tape.concat([zeros2, c_act], axis=1)
        accel = tape.add(tape.add(tape.rot_apply(r9, thrust_vec), g_const),
                         tape.smul(v, -params.drag))
        v = tape.add(v, tape.smul(accel, sub))
        p = tape.add(p, tape.smul(v, sub))
        r9 = tape.rot_mul(r9, tape.rot_exp(tape.smul(w_act, sub)))
    r9 = tape.record("renorm_rot", [r9])
    return {"p": p, "r9": r9, "v": v, "w_act": w_act, "c_act": c_act, "queue": queue}


def sample_initial_state(rng: np.random.Generator, init: InitStateParams,
                         n: int, delay_steps: int = 1) -> FullModelState:
    """Draw n random throw states; difficulty 0 collapses to level hover at
    (0, 0, 1). Draw order is fixed so seeded sequences are reproducible."""
    d = float(init.difficulty)
    p = np.empty((n, 3))
    p[:, 0] = d * init.pos_xy * rng.uniform(-1.0, 1.0, n)
    p[:, 1] = d * init.pos_xy * rng.uniform(-1.0, 1.0, n)
    p[:, 2] = 1.0 + d * rng.uniform(init.pos_z_low - 1.0, init.pos_z_high - 1.0, n)

    v_dir = rng.standard_normal((n, 3))
    v_dir /= np.maximum(np.linalg.norm(v_dir, axis=1, keepdims=True), 1e-12)
    v_mag = d * init.max_speed * rng.uniform(0.0, 1.0, n) ** (1.0 / 3.0)
    v = v_dir * v_mag[:, None]

    tilt = d * np.deg2rad(init.max_tilt_deg) * rng.uniform(0.0, 1.0, n)
    azim = rng.uniform(0.0, 2.0 * np.pi, n)
    axis = np.stack([np.cos(azim), np.sin(azim), np.zeros(n)], axis=1)
    yaw = d * rng.uniform(-np.pi, np.pi, n)
    r = so3.exp_so3(axis * tilt[:, None]) @ so3.rot_z(yaw)

    w_dir = rng.standard_normal((n, 3))
    w_dir /= np.maximum(np.linalg.norm(w_dir, axis=1, keepdims=True), 1e-12)
    w_mag = d * init.max_body_rate * rng.uniform(0.0, 1.0, n) ** (1.0 / 3.0)
    omega_act = w_dir * w_mag[:, None]

    full = FullModelState.at_rest(QuadState(p, r, v), delay_steps)
    full.omega_act = omega_act
    return full
