"""MLP policy, parameter initialization, the Adam optimizer used by every
trainer, and the checkpoint format.

Networks are plain lists of (W, b) pairs with tanh hidden activations. The
"action" head squashes its 4 outputs into the admissible action box, so no
downstream clamping is needed in nominal operation; the "linear" head is used
for value functions and state-regression.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Eager

CHECKPOINT_VERSION = 1

_EAGER = Eager()


@dataclass(frozen=True)
class MlpArch:
    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    head: str = "action"  # "action" squashes to [0,c_max]x[-w_max,w_max]^3, "linear" is raw

    def dims(self) -> list[tuple[int, int]]:
        sizes = [self.in_dim, *self.hidden, self.out_dim]
        return list(zip(sizes[:-1], sizes[1:]))


@dataclass
class MlpParams:
    arch: MlpArch
    weights: list[np.ndarray]  # (in, out) per layer
    biases: list[np.ndarray]

    def flat_list(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.arch, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def set_flat_list(self, arrays: list[np.ndarray]) -> None:
        it = iter(arrays)
        for i in range(len(self.weights)):
            self.weights[i] = next(it)
            self.biases[i] = next(it)


def init_params(arch: MlpArch, rng: np.random.Generator,
                head_scale: float = 0.01) -> MlpParams:
    """Glorot-uniform weights, zero biases; the final layer of an action head
    is scaled down so the initial behavior sits near mid-thrust hover."""
    weights, biases = [], []
    layer_dims = arch.dims()
    for i, (fan_in, fan_out) in enumerate(layer_dims):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        if arch.head == "action" and i == len(layer_dims) - 1:
            w = w * head_scale
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpParams(arch, weights, biases)


def glorot_std(fan_in: int, fan_out: int) -> float:
    """Target standard deviation of the uniform init, for sanity checks."""
    return np.sqrt(2.0 / (fan_in + fan_out))


def param_handles(params: MlpParams, ops, requires_grad: bool = True) -> list:
    """Enter all parameters onto a tape (or through Eager) once per graph."""
    handles = []
    for arr in params.flat_list():
        handles.append(ops.leaf(arr, requires_grad=requires_grad))
    return handles


def forward_from_handles(arch: MlpArch, handles: list, obs, ops,
                         c_max: float = 2.0 * 9.81, omega_max: float = 5.0):
    """Forward pass over the shared ops interface; obs is a (B, in_dim) handle."""
    if ops.value(obs).shape[1] != arch.in_dim:
        raise ValueError(
            f"observation dim {ops.value(obs).shape[1]} != network input {arch.in_dim}")
    h = obs
    n_layers = len(arch.dims())
    for i in range(n_layers):
        w, b = handles[2 * i], handles[2 * i + 1]
        h = ops.affine(h, w, b)
        if i < n_layers - 1:
            h = ops.tanh(h)
    if arch.head == "linear":
        return h
    return squash(ops, h, c_max, omega_max)


def squash(ops, y, c_max: float, omega_max: float):
    """Map raw 4-channel net outputs into the admissible action box:
    c = c_max (tanh(y0)+1)/2, omega_i = omega_max tanh(y_i)."""
    bsz = ops.value(y).shape[0]
    t0 = ops.tanh(ops.slice(y, 0, 1, axis=1))
    c = ops.add(ops.smul(t0, 0.5 * c_max), ops.const(np.full((bsz, 1), 0.5 * c_max)))
    w_out = ops.smul(ops.tanh(ops.slice(y, 1, 4, axis=1)), omega_max)
    return ops.concat([c, w_out], axis=1)


def squash_np(y: np.ndarray, c_max: float = 2.0 * 9.81,
              omega_max: float = 5.0) -> np.ndarray:
    """Eager squash, bitwise identical to the taped head."""
    return squash(_EAGER, np.asarray(y, dtype=np.float64), c_max, omega_max)


def forward(params: MlpParams, obs, ops=None, *, c_max: float = 2.0 * 9.81,
            omega_max: float = 5.0):
    """Policy forward; records onto ``ops`` when it is a Tape, otherwise eager."""
    if ops is None:
        ops = _EAGER
        obs_h = obs
    else:
        obs_h = obs
    handles = param_handles(params, ops, requires_grad=False) if isinstance(ops, Eager) \
        else param_handles(params, ops, requires_grad=True)
    return forward_from_handles(params.arch, handles, obs_h, ops,
                                c_max=c_max, omega_max=omega_max)


def forward_np(params: MlpParams, obs: np.ndarray, *, c_max: float = 2.0 * 9.81,
               omega_max: float = 5.0) -> np.ndarray:
    """Eager forward on plain arrays, bitwise identical to the taped pass."""
    handles = param_handles(params, _EAGER, requires_grad=False)
    return forward_from_handles(params.arch, handles, np.asarray(obs, dtype=np.float64),
                                _EAGER, c_max=c_max, omega_max=omega_max)


# ----------------------------------------------------------------- optimizer

@dataclass
class AdamParams:
    lr: float = 3e-4
    lr_final: float = 0.0   # > 0 enables linear decay toward this value
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0  # global norm; <= 0 disables

    def lr_at(self, step: int, total: int) -> float:
        """Linearly decayed rate for trainers that anneal; constant default."""
        if self.lr_final <= 0.0 or total <= 1:
            return self.lr
        frac = min(max(step / (total - 1), 0.0), 1.0)
        return self.lr + (self.lr_final - self.lr) * frac


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    skipped: int = 0

    @classmethod
    def for_params(cls, arrays: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def global_norm(grads: list[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def adam_step(state: AdamState, arrays: list[np.ndarray], grads: list[np.ndarray],
              hp: AdamParams) -> list[np.ndarray]:
    """Bias-corrected Adam descent step with global gradient-norm clipping.

    Minimizes: pass loss gradients directly; to maximize an objective pass
    its negated gradients. Returns new parameter arrays; a non-finite
    gradient skips the step entirely (counted in ``state.skipped``) so one
    bad batch cannot poison the moments.
    """
    if len(arrays) != len(grads):
        raise ValueError("parameter/gradient count mismatch")
    for a, g in zip(arrays, grads):
        if a.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {a.shape}")
    if not all(np.all(np.isfinite(g)) for g in grads):
        state.skipped += 1
        return arrays
    gnorm = global_norm(grads)
    if hp.grad_clip > 0 and gnorm > hp.grad_clip:
        scale = hp.grad_clip / gnorm
        grads = [g * scale for g in grads]
    state.t += 1
    t = state.t
    c1 = 1.0 - hp.beta1 ** t
    c2 = 1.0 - hp.beta2 ** t
    out = []
    for i, (a, g) in enumerate(zip(arrays, grads)):
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(a - hp.lr * m_hat / (np.sqrt(v_hat) + hp.eps))
    return out


# ---------------------------------------------------------------- checkpoint

def save_policy(path, params: MlpParams, extra: dict | None = None,
                rng_state: dict | None = None) -> None:
    """Write a policy checkpoint: little-endian float64 arrays plus a JSON
    header with the architecture, format version and optional RNG state."""
    arrays = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"w{i}"] = w.astype("<f8")
        arrays[f"b{i}"] = b.astype("<f8")
    meta = {
        "version": CHECKPOINT_VERSION,
        "arch": {
            "in_dim": params.arch.in_dim,
            "hidden": list(params.arch.hidden),
            "out_dim": params.arch.out_dim,
            "head": params.arch.head,
        },
        "n_layers": len(params.weights),
        "extra": extra or {},
        "rng_state": rng_state,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_policy(path) -> tuple[MlpParams, dict]:
    """Read a checkpoint written by ``save_policy``; returns (params, meta)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {meta.get('version')}")
        a = meta["arch"]
        arch = MlpArch(a["in_dim"], tuple(a["hidden"]), a["out_dim"], a["head"])
        weights, biases = [], []
        for i in range(meta["n_layers"]):
            weights.append(data[f"w{i}"].astype(np.float64))
            biases.append(data[f"b{i}"].astype(np.float64))
    params = MlpParams(arch, weights, biases)
    expect = [dims for dims in arch.dims()]
    got = [w.shape for w in weights]
    if expect != got:
        raise ValueError(f"checkpoint layer shapes {got} do not match arch {expect}")
    return params, meta
