"""Camera projection and observation building: analytic pinhole oracles,
validity handling, ring-buffer semantics, and differentiability."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffquad import so3
from diffquad.autodiff import Eager, Tape
from diffquad.dynamics import Action, InitStateParams, QuadState, U_HOVER, \
    sample_initial_state
from diffquad.observation import (CameraParams, ObservationBuffer,
                                  build_feature_observation, hexagon_layout,
                                  observe_state, project_feature,
                                  project_features)

EAGER = Eager()


def nadir_state(height=1.0, n=1):
    return QuadState.hover(n, height)


def test_observe_state_layout():
    obs = observe_state(nadir_state())
    expect = np.array([0, 0, 1, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0], dtype=float)
    assert np.array_equal(obs[0], expect)


def test_observe_state_roundtrip():
    rng = np.random.default_rng(0)
    init = sample_initial_state(rng, InitStateParams(), 8)
    obs = observe_state(init.core)
    back = QuadState.from_flat(obs)
    assert np.array_equal(back.flatten(), obs)


def test_optical_axis_projects_to_principal_point():
    cam = CameraParams()
    uv, valid = project_feature(cam, nadir_state(), [0.0, 0.0, 0.0])
    assert valid[0]
    assert np.allclose(uv[0], [0.0, 0.0], atol=1e-12)
    cam2 = CameraParams(model="pinhole", focal=1.0)
    uv2, valid2 = project_feature(cam2, nadir_state(), [0.0, 0.0, 0.0])
    assert valid2[0] and np.allclose(uv2[0], [0.0, 0.0], atol=1e-12)


def test_pinhole_45_degrees_hits_unit_coordinate():
    cam = CameraParams(model="pinhole", focal=1.0, pixel_clamp=1.2)
    uv, valid = project_feature(cam, nadir_state(height=1.0), [1.0, 0.0, 0.0])
    assert valid[0]
    assert abs(uv[0, 0] - 1.0) < 1e-12


def test_double_sphere_150deg_fov_calibration():
    # 75 degrees off axis lands on the border, and stays valid
    cam = CameraParams()
    th = np.deg2rad(75.0)
    state = nadir_state(height=1.0)
    feat = [np.tan(th), 0.0, 0.0]
    uv, valid = project_feature(cam, state, feat)
    assert valid[0]
    assert abs(abs(uv[0, 0]) - 1.0) < 1e-9


def test_behind_camera_invalid_and_clamped():
    cam = CameraParams()
    uv, valid = project_feature(cam, nadir_state(), [0.0, 0.0, 5.0])  # above
    assert not valid[0]
    assert np.all(np.abs(uv[0]) <= cam.pixel_clamp + 1e-15)


def test_pixels_always_within_clamp():
    cam = CameraParams()
    layout = hexagon_layout()
    rng = np.random.default_rng(2)
    init = sample_initial_state(rng, InitStateParams(), 200)
    pix, _ = project_features(EAGER, cam, layout, init.core.p,
                              so3.mat_to_vec9(init.core.r))
    assert np.all(np.abs(pix) <= cam.pixel_clamp + 1e-15)


def test_yaw_rotation_rotates_pixels():
    cam = CameraParams(model="pinhole", focal=1.0, pixel_clamp=10.0)
    layout = hexagon_layout(0.5)
    psi = 0.4
    s0 = nadir_state()
    s1 = QuadState(s0.p.copy(), so3.rot_z(np.array([psi])), s0.v.copy())
    pix0, _ = project_features(EAGER, cam, layout, s0.p, so3.mat_to_vec9(s0.r))
    pix1, _ = project_features(EAGER, cam, layout, s1.p, so3.mat_to_vec9(s1.r))
    # vehicle yaw by psi rotates every image point by psi about the center
    rot = np.array([[np.cos(psi), -np.sin(psi)], [np.sin(psi), np.cos(psi)]])
    p0 = pix0[0].reshape(7, 2)
    p1 = pix1[0].reshape(7, 2)
    assert np.allclose(p1, p0 @ rot.T, atol=1e-12)


def test_observation_dimensions():
    from diffquad.observation import observe_features
    cam = CameraParams()
    layout = hexagon_layout()
    buf = ObservationBuffer()
    state = nadir_state(n=3)
    obs = observe_features(buf, cam, layout, state, Action.hover(3))
    assert obs.shape == (3, 82)
    assert observe_state(state).shape == (3, 15)


def test_buffer_replicates_first_frame():
    buf = ObservationBuffer()
    frame = np.arange(14, dtype=float).reshape(1, 14)
    act = np.tile(U_HOVER, (1, 1))
    buf.push(frame, act)
    flat = buf.flat(EAGER)
    assert flat.shape == (1, 82)
    for k in range(5):
        assert np.array_equal(flat[0, 14 * k:14 * (k + 1)], frame[0])
    for k in range(3):
        assert np.array_equal(flat[0, 70 + 4 * k:74 + 4 * k], act[0])


def test_buffer_newest_first_ordering():
    buf = ObservationBuffer()
    frames = [np.full((1, 14), float(i)) for i in range(7)]
    acts = [np.full((1, 4), float(10 + i)) for i in range(7)]
    for f, a in zip(frames, acts):
        buf.push(f, a)
    flat = buf.flat(EAGER)[0]
    # newest frame first, then back in time
    assert flat[0] == 6.0 and flat[14] == 5.0 and flat[56] == 2.0
    assert flat[70] == 16.0 and flat[74] == 15.0 and flat[78] == 14.0


def test_static_hover_observation_constant():
    cam = CameraParams()
    layout = hexagon_layout()
    buf = ObservationBuffer()
    state = nadir_state()
    act = np.tile(U_HOVER, (1, 1))
    obs = [build_feature_observation(EAGER, buf, cam, layout, state.p,
                                     so3.mat_to_vec9(state.r), act)
           for _ in range(6)]
    for o in obs[1:]:
        assert np.array_equal(o, obs[0])
    assert obs[0].shape == (1, 82)


def test_observation_gradients_match_fd_when_valid():
    cam = CameraParams()
    layout = hexagon_layout()
    rng = np.random.default_rng(4)
    w = rng.normal(size=82)

    def scalar_of_state(xflat):
        tape = Tape()
        x = tape.leaf(xflat, requires_grad=True)
        p = tape.slice(x, 0, 3, axis=1)
        r9 = tape.slice(x, 3, 12, axis=1)
        buf = ObservationBuffer()
        obs = build_feature_observation(
            tape, buf, cam, layout, p, r9, tape.const(np.tile(U_HOVER, (1, 1))))
        root = tape.sum(tape.mul(obs, tape.const(w[None, :])))
        return tape, x, root

    init = sample_initial_state(rng, InitStateParams(difficulty=0.3), 1)
    x0 = init.core.flatten()
    tape, x, root = scalar_of_state(x0)
    grads = tape.backward(root)
    g = grads[x.node_id]

    eps = 1e-6
    fd = np.zeros(15)
    for j in range(15):
        xp, xm = x0.copy(), x0.copy()
        xp[0, j] += eps
        xm[0, j] -= eps
        fd[j] = (float(scalar_of_state(xp)[2].value)
                 - float(scalar_of_state(xm)[2].value)) / (2 * eps)
    assert np.abs(g[0] - fd).max() / max(np.abs(fd).max(), 1.0) < 1e-4


def test_projection_deterministic():
    cam = CameraParams()
    layout = hexagon_layout()
    rng = np.random.default_rng(6)
    init = sample_initial_state(rng, InitStateParams(), 5)
    a, _ = project_features(EAGER, cam, layout, init.core.p,
                            so3.mat_to_vec9(init.core.r))
    b, _ = project_features(EAGER, cam, layout, init.core.p,
                            so3.mat_to_vec9(init.core.r))
    assert np.array_equal(a, b)


def test_unknown_camera_model_rejected():
    cam = CameraParams(model="orthographic")
    with pytest.raises(ValueError, match="camera model"):
        project_feature(cam, nadir_state(), [0.0, 0.0, 0.0])


def test_hexagon_layout_distinct_points():
    pts = hexagon_layout()
    assert pts.shape == (7, 3)
    assert np.all(pts[:, 2] == 0.0)
    d = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
    assert d[~np.eye(7, dtype=bool)].min() > 0.1
