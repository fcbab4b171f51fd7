"""Rotation-matrix utilities: exponential map, right Jacobian, batched helpers.

All functions operate on batches: rotation matrices are (B, 3, 3), rotation
vectors (B, 3). The flat 9-vector layout used across the package is
column-major, vec(R) = R.flatten(order="F") per batch entry.
"""

from __future__ import annotations

import numpy as np

# Below this squared angle the closed-form coefficients switch to their
# Taylor series to avoid 0/0.
_SMALL_SQ = 1e-12


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrices [w]x for a batch of 3-vectors (B, 3) -> (B, 3, 3)."""
    w = np.asarray(w, dtype=np.float64)
    B = w.shape[0]
    out = np.zeros((B, 3, 3))
    out[:, 0, 1] = -w[:, 2]
    out[:, 0, 2] = w[:, 1]
    out[:, 1, 0] = w[:, 2]
    out[:, 1, 2] = -w[:, 0]
    out[:, 2, 0] = -w[:, 1]
    out[:, 2, 1] = w[:, 0]
    return out


def _ab_coeffs(theta_sq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rodrigues coefficients A = sin t / t and B = (1 - cos t) / t^2 from t^2."""
    small = theta_sq < _SMALL_SQ
    ts = np.where(small, 1.0, theta_sq)  # dummy to keep sqrt/div finite
    t = np.sqrt(ts)
    a = np.where(small, 1.0 - theta_sq / 6.0, np.sin(t) / t)
    b = np.where(small, 0.5 - theta_sq / 24.0, (1.0 - np.cos(t)) / ts)
    return a, b


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Matrix exponential of [w]x for a batch of rotation vectors (B, 3)."""
    w = np.asarray(w, dtype=np.float64)
    theta_sq = np.einsum("bi,bi->b", w, w)
    a, b = _ab_coeffs(theta_sq)
    wx = hat(w)
    wx2 = wx @ wx
    return np.eye(3) + a[:, None, None] * wx + b[:, None, None] * wx2


def right_jacobian(w: np.ndarray) -> np.ndarray:
    """Right Jacobian J_r of SO(3): exp((w + d)^) ~ exp(w^) exp((J_r(w) d)^)."""
    w = np.asarray(w, dtype=np.float64)
    theta_sq = np.einsum("bi,bi->b", w, w)
    small = theta_sq < _SMALL_SQ
    ts = np.where(small, 1.0, theta_sq)
    t = np.sqrt(ts)
    # c1 = (1 - cos t) / t^2, c2 = (t - sin t) / t^3
    c1 = np.where(small, 0.5 - theta_sq / 24.0, (1.0 - np.cos(t)) / ts)
    c2 = np.where(small, 1.0 / 6.0 - theta_sq / 120.0, (t - np.sin(t)) / (ts * t))
    wx = hat(w)
    wx2 = wx @ wx
    return np.eye(3) - c1[:, None, None] * wx + c2[:, None, None] * wx2


def dexp_so3(w: np.ndarray) -> np.ndarray:
    """Derivative of the exponential map, batched.

    Returns (B, 9, 3) where column j is d vec(exp([w]x)) / d w_j in the
    column-major vec layout. Uses dE/dw_j = E [J_r(w) e_j]x.
    """
    w = np.asarray(w, dtype=np.float64)
    e = exp_so3(w)
    jr = right_jacobian(w)
    B = w.shape[0]
    # h[b, j] = hat(J_r(w_b) e_j), all three columns at once
    cols = jr.transpose(0, 2, 1)  # cols[b, j] = J_r e_j
    h = np.zeros((B, 3, 3, 3))
    h[:, :, 0, 1] = -cols[:, :, 2]
    h[:, :, 0, 2] = cols[:, :, 1]
    h[:, :, 1, 0] = cols[:, :, 2]
    h[:, :, 1, 2] = -cols[:, :, 0]
    h[:, :, 2, 0] = -cols[:, :, 1]
    h[:, :, 2, 1] = cols[:, :, 0]
    # t[b, j, c, r] = (E h[b, j])[r, c]; column-major rows are then (c, r)
    t = np.einsum("brk,bjkc->bjcr", e, h)
    return np.ascontiguousarray(t.reshape(B, 3, 9).transpose(0, 2, 1))


def mat_to_vec9(r: np.ndarray) -> np.ndarray:
    """(B, 3, 3) -> (B, 9) column-major flattening."""
    return np.ascontiguousarray(np.transpose(r, (0, 2, 1))).reshape(r.shape[0], 9)


def vec9_to_mat(v: np.ndarray) -> np.ndarray:
    """(B, 9) -> (B, 3, 3), inverse of mat_to_vec9."""
    return np.ascontiguousarray(np.transpose(v.reshape(v.shape[0], 3, 3), (0, 2, 1)))


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Gram-Schmidt re-orthonormalization of a batch of near-rotation matrices.

    Column 0 is normalized, column 1 made orthogonal to it, column 2 is their
    cross product, which also enforces det = +1.
    """
    r = np.asarray(r, dtype=np.float64)
    c0 = r[:, :, 0]
    c0 = c0 / np.linalg.norm(c0, axis=1, keepdims=True)
    c1 = r[:, :, 1]
    c1 = c1 - np.einsum("bi,bi->b", c0, c1)[:, None] * c0
    c1 = c1 / np.linalg.norm(c1, axis=1, keepdims=True)
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=2)


def rot_z(angle: np.ndarray) -> np.ndarray:
    """Batch of rotations about the world z axis; angle (B,) -> (B, 3, 3)."""
    angle = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    B = angle.shape[0]
    out = np.zeros((B, 3, 3))
    out[:, 0, 0] = c
    out[:, 0, 1] = -s
    out[:, 1, 0] = s
    out[:, 1, 1] = c
    out[:, 2, 2] = 1.0
    return out
