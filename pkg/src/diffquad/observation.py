"""Policy observations.

State mode: the flat 15-vector [p, vec(R), v]. Feature mode: normalized pixel
coordinates of 7 ground features seen by a downward camera, stacked over the
last 5 frames, plus the last 3 actions (82 entries total).

The projection is written once against the shared ops interface, so the taped
variant used for gradients and the eager variant used in rollouts produce
bitwise-identical values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import so3
from .autodiff import Eager
from .dynamics import U_HOVER, Action, QuadState

FRAME_HISTORY = 5
ACTION_HISTORY = 3

# Camera mounting, body to camera: camera x = body x, y/z flipped so the
# optical axis (+z) points along body -z, straight down for a level vehicle.
R_BODY_CAM = np.array([
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, -1.0],
])

_EAGER = Eager()


@dataclass
class CameraParams:
    """Wide-FOV double-sphere projection with a pinhole fallback.

    Coordinates are normalized so the image border sits at |u| = 1; the
    double-sphere defaults put a 75 degree off-axis ray on the border
    (150 degree FOV) and stay valid out to 122 degrees.
    """

    model: str = "double_sphere"   # or "pinhole"
    xi: float = -0.2
    alpha: float = 0.6
    focal: float = 0.6254689753872118
    pixel_clamp: float = 1.2
    noise_std: float = 0.0

    def validity_slope(self) -> float:
        """w2 bound of the double-sphere valid region: points with
        z <= -w2 * |X| have no well-defined projection."""
        a, xi = self.alpha, self.xi
        w1 = a / (1.0 - a) if a <= 0.5 else (1.0 - a) / a
        return (w1 + xi) / np.sqrt(2.0 * w1 * xi + xi * xi + 1.0)


def hexagon_layout(radius: float = 1.5) -> np.ndarray:
    """Default feature layout: ground-plane center point plus a hexagon."""
    ang = np.deg2rad(60.0 * np.arange(6))
    pts = np.zeros((7, 3))
    pts[1:, 0] = radius * np.cos(ang)
    pts[1:, 1] = radius * np.sin(ang)
    return pts


def observe_state(state: QuadState) -> np.ndarray:
    """State observation: the flat [p, vec(R), v] layout, (B, 15)."""
    return state.flatten()


def project_features(ops, camera: CameraParams, layout: np.ndarray,
                     p, r9, noise: np.ndarray | None = None):
    """Project all layout features for a batch of poses.

    ``p`` is a (B, 3) handle, ``r9`` a (B, 9) rotation handle. Returns
    (pixels, valid): a (B, 2K) handle of clamped normalized coordinates in
    feature-major order and a (B, K) boolean validity array. Invalid points
    are filled with the clamp bound and carry no gradient.
    """
    layout = np.asarray(layout, dtype=np.float64)
    k = layout.shape[0]
    bsz = ops.value(p).shape[0]
    p_rep = ops.repeat_rows(p, k)
    r_rep = ops.repeat_rows(r9, k)
    f_tile = ops.const(np.tile(layout, (bsz, 1)))
    d = ops.sub(f_tile, p_rep)
    xb = ops.rot_apply_t(r_rep, d)
    xc = ops.matmul(xb, ops.const(R_BODY_CAM.T))
    xy = ops.slice(xc, 0, 2, axis=1)
    z = ops.slice(xc, 2, 3, axis=1)
    if camera.model == "double_sphere":
        d1 = ops.sqrt(ops.sum(ops.mul(xc, xc), axis=1))
        zs = ops.add(z, ops.smul(d1, camera.xi))
        xy2 = ops.sum(ops.mul(xy, xy), axis=1)
        d2 = ops.sqrt(ops.add(xy2, ops.mul(zs, zs)))
        denom = ops.add(ops.smul(d2, camera.alpha), ops.smul(zs, 1.0 - camera.alpha))
        valid = (ops.value(z) > -camera.validity_slope() * ops.value(d1)) \
            & (ops.value(denom) > 1e-9)
    elif camera.model == "pinhole":
        denom = z
        valid = ops.value(z) > 1e-9
    else:
        raise ValueError(f"unknown camera model: {camera.model!r}")
    m = valid.astype(np.float64)                       # (B*K, 1)
    denom_safe = ops.add(ops.mul(denom, ops.const(m)), ops.const(1.0 - m))
    den2 = ops.concat([denom_safe, denom_safe], axis=1)
    uv = ops.smul(ops.div(xy, den2), camera.focal)
    m2 = np.repeat(m, 2, axis=1)
    uv = ops.add(ops.mul(uv, ops.const(m2)), ops.const((1.0 - m2) * camera.pixel_clamp))
    if noise is not None:
        uv = ops.add(uv, ops.const(noise))
    uv = ops.clamp(uv, -camera.pixel_clamp, camera.pixel_clamp)
    pixels = ops.reshape(uv, (bsz, 2 * k))
    return pixels, valid.reshape(bsz, k)


def project_feature(camera: CameraParams, state: QuadState, feature) -> tuple[np.ndarray, np.ndarray]:
    """Single-feature projection; returns ((B, 2) pixels, (B,) valid)."""
    layout = np.asarray(feature, dtype=np.float64).reshape(1, 3)
    pix, valid = project_features(_EAGER, camera, layout, state.p,
                                  so3.mat_to_vec9(state.r))
    return pix, valid[:, 0]


class ObservationBuffer:
    """Ring buffers of pixel frames and actions, newest first.

    Items are opaque handles (arrays or tape Vars); the first pushed frame is
    replicated into the whole history. Flattened layout: frames t, t-1, ...,
    t-4, then actions u_{t-1}, u_{t-2}, u_{t-3}.
    """

    def __init__(self):
        self.frames: list = []
        self.actions: list = []

    def push(self, frame, action) -> None:
        if not self.frames:
            self.frames = [frame] * FRAME_HISTORY
            self.actions = [action] * ACTION_HISTORY
        else:
            self.frames = [frame] + self.frames[:-1]
            self.actions = [action] + self.actions[:-1]

    def flat(self, ops):
        if not self.frames:
            raise ValueError("observation buffer is empty")
        return ops.concat(self.frames + self.actions, axis=1)


def build_feature_observation(ops, buffer: ObservationBuffer, camera: CameraParams,
                              layout: np.ndarray, p, r9, last_action,
                              noise: np.ndarray | None = None):
    """Push the current frame and last action, return the (B, 82) observation."""
    pixels, _ = project_features(ops, camera, layout, p, r9, noise=noise)
    buffer.push(pixels, last_action)
    return buffer.flat(ops)


def observe_features(buffer: ObservationBuffer, camera: CameraParams,
                     layout: np.ndarray, state: QuadState, last_action: Action,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Eager feature observation for rollouts and evaluation.

    Draws pixel noise from ``rng`` when the camera has noise_std > 0; the
    drawn noise is recoverable from the buffer state for re-taping.
    """
    noise = None
    if camera.noise_std > 0.0 and rng is not None:
        k = np.asarray(layout).shape[0]
        noise = camera.noise_std * rng.standard_normal((state.batch * k, 2))
    return build_feature_observation(_EAGER, buffer, camera, layout, state.p,
                                     so3.mat_to_vec9(state.r),
                                     last_action.as_matrix(), noise=noise)
