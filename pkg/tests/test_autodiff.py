"""Tape engine: per-primitive finite-difference oracles, graph mechanics,
and the injected-Jacobian link nodes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffquad import so3
from diffquad.autodiff import Eager, Tape, inject_jacobian

FD_EPS = 1e-6
FD_TOL = 1e-5
TRIALS = 100


def _scalarize(tape, out, w):
    if out.value.ndim == 0:
        return out
    return tape.sum(tape.mul(out, tape.const(w)))


def _fd_check(make_inputs, apply_op, seed, tol=FD_TOL):
    """Backward adjoints of every input match central finite differences of a
    fixed random scalarization of the op output."""
    rng = np.random.default_rng(seed)
    vals = make_inputs(rng)

    def run(vs):
        tape = Tape()
        leaves = [tape.leaf(v, requires_grad=True) for v in vs]
        out = apply_op(tape, leaves)
        root = _scalarize(tape, out, weights)
        return tape, leaves, root

    tape0 = Tape()
    probe = apply_op(tape0, [tape0.leaf(v, requires_grad=True) for v in vals])
    weights = rng.normal(size=probe.value.shape)

    tape, leaves, root = run(vals)
    grad_map = tape.backward(root)

    def f(vs):
        _, _, r = run(vs)
        return float(r.value)

    for i, v in enumerate(vals):
        analytic = grad_map[leaves[i].node_id]
        fd = np.zeros_like(np.atleast_1d(np.asarray(v, dtype=float)))
        flat_v = np.asarray(v, dtype=float)
        it = np.nditer(np.atleast_1d(flat_v), flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            vp = [np.array(x, dtype=float, copy=True) for x in vals]
            vm = [np.array(x, dtype=float, copy=True) for x in vals]
            if flat_v.ndim == 0:
                vp[i] = flat_v + FD_EPS
                vm[i] = flat_v - FD_EPS
            else:
                vp[i][idx] += FD_EPS
                vm[i][idx] -= FD_EPS
            fd[idx if flat_v.ndim else ()] = (f(vp) - f(vm)) / (2 * FD_EPS)
        fd = fd.reshape(np.shape(analytic))
        scale = max(np.abs(fd).max(), 1.0)
        assert np.abs(analytic - fd).max() / scale < tol, f"input {i}"


# one FD oracle per primitive, randomized over many trials

def _mk(shape_specs):
    def make(rng):
        return [rng.normal(size=s) if s else rng.normal() for s in shape_specs]
    return make


ELEMENTWISE_BINARY = [
    ("add", lambda t, l: t.add(l[0], l[1])),
    ("sub", lambda t, l: t.sub(l[0], l[1])),
    ("mul", lambda t, l: t.mul(l[0], l[1])),
]


@pytest.mark.parametrize("name,op", ELEMENTWISE_BINARY)
def test_fd_elementwise_binary(name, op):
    for seed in range(TRIALS):
        _fd_check(_mk([(3, 4), (3, 4)]), op, seed)


def test_fd_div():
    def make(rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(3, 4))
        b += np.sign(b) * 0.5  # keep away from zero
        return [a, b]
    for seed in range(TRIALS):
        _fd_check(make, lambda t, l: t.div(l[0], l[1]), seed)


def test_fd_matmul():
    for seed in range(TRIALS):
        _fd_check(_mk([(3, 4), (4, 5)]), lambda t, l: t.matmul(l[0], l[1]), seed)


def test_fd_matvec():
    for seed in range(TRIALS):
        _fd_check(_mk([(4, 3), (3,)]), lambda t, l: t.matvec(l[0], l[1]), seed)


def test_fd_affine():
    for seed in range(TRIALS):
        _fd_check(_mk([(3, 4), (4, 5), (5,)]),
                  lambda t, l: t.affine(l[0], l[1], l[2]), seed)


@pytest.mark.parametrize("name,op", [
    ("tanh", lambda t, l: t.tanh(l[0])),
    ("exp", lambda t, l: t.exp(l[0])),
    ("smul", lambda t, l: t.smul(l[0], -2.5)),
    ("transpose", lambda t, l: t.transpose(l[0])),
    ("sum_all", lambda t, l: t.sum(l[0])),
    ("sum_rows", lambda t, l: t.sum(l[0], axis=1)),
    ("repeat_rows", lambda t, l: t.repeat_rows(l[0], 3)),
    ("reshape", lambda t, l: t.reshape(l[0], (4, 3))),
    ("slice_cols", lambda t, l: t.slice(l[0], 1, 3, axis=1)),
    ("slice_rows", lambda t, l: t.slice(l[0], 0, 2, axis=0)),
])
def test_fd_elementwise_unary(name, op):
    for seed in range(TRIALS):
        _fd_check(_mk([(3, 4)]), op, seed)


def test_fd_log_sqrt():
    def make(rng):
        return [rng.uniform(0.5, 3.0, size=(3, 4))]
    for seed in range(TRIALS):
        _fd_check(make, lambda t, l: t.log(l[0]), seed)
        _fd_check(make, lambda t, l: t.sqrt(l[0]), seed)


def test_fd_huber():
    def make(rng):
        x = rng.normal(size=(3, 4)) * 2.0
        x[np.abs(np.abs(x) - 1.0) < 0.05] += 0.2  # stay off the kink
        return [x]
    for seed in range(TRIALS):
        _fd_check(make, lambda t, l: t.huber(l[0], 1.0), seed)


def test_fd_clamp():
    def make(rng):
        x = rng.normal(size=(3, 4)) * 2.0
        x[np.abs(np.abs(x) - 1.5) < 0.05] += 0.2  # stay off the bounds
        return [x]
    for seed in range(TRIALS):
        _fd_check(make, lambda t, l: t.clamp(l[0], -1.5, 1.5), seed)


def test_fd_minimum():
    def make(rng):
        a = rng.normal(size=(3, 4))
        b = a + np.where(rng.normal(size=(3, 4)) > 0, 0.3, -0.3)  # no ties
        return [a, b]
    for seed in range(TRIALS):
        _fd_check(make, lambda t, l: t.minimum(l[0], l[1]), seed)


def test_fd_concat():
    for seed in range(TRIALS):
        _fd_check(_mk([(3, 2), (3, 4)]),
                  lambda t, l: t.concat([l[0], l[1]], axis=1), seed)


def test_fd_cross():
    for seed in range(TRIALS):
        _fd_check(_mk([(5, 3), (5, 3)]), lambda t, l: t.cross(l[0], l[1]), seed)


def test_fd_add_bias():
    for seed in range(TRIALS):
        _fd_check(_mk([(3, 4), (4,)]), lambda t, l: t.add_bias(l[0], l[1]), seed)


def _random_rot9(rng, n):
    return so3.mat_to_vec9(so3.exp_so3(rng.normal(size=(n, 3))))


def test_fd_rot_exp():
    def make(rng):
        return [rng.normal(size=(4, 3))]
    for seed in range(TRIALS):
        _fd_check(make, lambda t, l: t.rot_exp(l[0]), seed)


def test_fd_rot_mul_apply():
    def make(rng):
        return [_random_rot9(rng, 4), _random_rot9(rng, 4)]
    def make_apply(rng):
        return [_random_rot9(rng, 4), rng.normal(size=(4, 3))]
    for seed in range(40):
        _fd_check(make, lambda t, l: t.rot_mul(l[0], l[1]), seed)
        _fd_check(make_apply, lambda t, l: t.rot_apply(l[0], l[1]), seed)
        _fd_check(make_apply, lambda t, l: t.rot_apply_t(l[0], l[1]), seed)


# ------------------------------------------------------------ graph basics

def test_record_scalar_examples():
    tape = Tape()
    x = tape.leaf(2.0, requires_grad=True)
    y = tape.leaf(3.0, requires_grad=True)
    assert float(tape.add(x, y).value) == 5.0
    r = np.random.default_rng(0).normal(size=(3, 3))
    eye = tape.const(np.eye(3))
    rv = tape.const(r)
    assert np.array_equal(tape.matmul(eye, rv).value, r)
    z = tape.tanh(tape.leaf(0.0))
    assert float(z.value) == 0.0


def test_backward_product_rule():
    tape = Tape()
    x = tape.leaf(2.0, requires_grad=True)
    y = tape.leaf(3.0, requires_grad=True)
    root = tape.mul(x, y)
    grads = tape.backward(root)
    assert float(grads[x.node_id]) == 3.0
    assert float(grads[y.node_id]) == 2.0


def test_backward_tanh_at_zero():
    tape = Tape()
    x = tape.leaf(0.0, requires_grad=True)
    grads = tape.backward(tape.tanh(x))
    assert float(grads[x.node_id]) == 1.0


def test_backward_requires_scalar_root():
    tape = Tape()
    x = tape.leaf(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        tape.backward(x)


def test_unknown_op_rejected():
    tape = Tape()
    x = tape.leaf(1.0)
    with pytest.raises(ValueError, match="unknown op"):
        tape.record("convolve", [x])


def test_shape_mismatch_rejected():
    tape = Tape()
    a = tape.leaf(np.ones((2, 3)))
    b = tape.leaf(np.ones((3, 2)))
    with pytest.raises(ValueError, match="shape"):
        tape.add(a, b)
    with pytest.raises(ValueError, match="matmul"):
        tape.matmul(a, tape.leaf(np.ones((2, 2))))


def test_no_grad_leaf_receives_nothing():
    tape = Tape()
    x = tape.leaf(2.0, requires_grad=True)
    c = tape.leaf(3.0, requires_grad=False)
    grads = tape.backward(tape.mul(x, c))
    assert c.node_id not in grads
    assert tape.adjoint(c).shape == ()
    assert float(tape.adjoint(c)) == 0.0


def test_unvisited_leaf_gradient_is_zero():
    tape = Tape()
    x = tape.leaf(np.ones(3), requires_grad=True)
    y = tape.leaf(2.0, requires_grad=True)
    root = tape.mul(y, y)  # x never participates
    grads = tape.backward(root)
    assert np.array_equal(grads[x.node_id], np.zeros(3))


def test_reset_empties_tape():
    tape = Tape()
    tape.leaf(1.0)
    tape.reset()
    assert len(tape) == 0


def test_replay_bitwise_identical():
    rng = np.random.default_rng(3)
    tape = Tape()
    w = tape.leaf(rng.normal(size=(4, 4)), requires_grad=True)
    v = tape.leaf(rng.normal(size=(4,)), requires_grad=True)
    root = tape.sum(tape.tanh(tape.matvec(w, v)))
    g1 = tape.backward(root)
    g2 = tape.backward(root)
    for k in g1:
        assert np.array_equal(g1[k], g2[k])


@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
@settings(max_examples=30)
def test_backward_linearity(a, b):
    rng = np.random.default_rng(7)
    wv = rng.normal(size=(3, 3))
    vv = rng.normal(size=3)

    def grads_of(alpha, beta):
        tape = Tape()
        w = tape.leaf(wv, requires_grad=True)
        v = tape.leaf(vv, requires_grad=True)
        f = tape.sum(tape.matvec(w, v))
        g = tape.sum(tape.mul(v, v))
        root = tape.add(tape.smul(f, alpha), tape.smul(g, beta))
        gm = tape.backward(root)
        return gm[w.node_id], gm[v.node_id]

    gw_ab, gv_ab = grads_of(a, b)
    gw_a, gv_a = grads_of(1.0, 0.0)
    gw_b, gv_b = grads_of(0.0, 1.0)
    assert np.allclose(gw_ab, a * gw_a + b * gw_b, atol=1e-12)
    assert np.allclose(gv_ab, a * gv_a + b * gv_b, atol=1e-12)


# ------------------------------------------------------- custom links

def test_inject_identity_jacobian():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]), requires_grad=True)
    out = tape.custom_link([x], np.array([5.0, 6.0]))
    inject_jacobian(tape, x, out, np.eye(2))
    g = np.array([0.3, -0.7])
    root = tape.sum(tape.mul(out, tape.const(g)))
    grads = tape.backward(root)
    assert np.allclose(grads[x.node_id], g)


def test_inject_scaled_jacobian():
    tape = Tape()
    x = tape.leaf(np.zeros(2), requires_grad=True)
    out = tape.custom_link([x], np.zeros(2))
    inject_jacobian(tape, x, out, 2.0 * np.eye(2))
    root = tape.sum(out)   # adjoint(out) = (1, 1)
    grads = tape.backward(root)
    assert np.allclose(grads[x.node_id], np.array([2.0, 2.0]))


def test_inject_shape_mismatch_rejected():
    tape = Tape()
    x = tape.leaf(np.zeros(3), requires_grad=True)
    out = tape.custom_link([x], np.zeros(2))
    with pytest.raises(ValueError, match="jacobian shape"):
        inject_jacobian(tape, x, out, np.eye(3))


def test_inject_requires_custom_link():
    tape = Tape()
    x = tape.leaf(np.zeros(3), requires_grad=True)
    y = tape.smul(x, 2.0)
    with pytest.raises(ValueError, match="custom_link"):
        inject_jacobian(tape, x, y, np.eye(3))


def test_missing_jacobian_raises_in_backward():
    tape = Tape()
    x = tape.leaf(np.zeros(2), requires_grad=True)
    out = tape.custom_link([x], np.zeros(2))
    with pytest.raises(ValueError, match="no injected jacobian"):
        tape.backward(tape.sum(out))


def test_batched_custom_link_rows_independent():
    tape = Tape()
    x = tape.leaf(np.zeros((3, 2)), requires_grad=True)
    out = tape.custom_link([x], np.zeros((3, 2)))
    jac = np.stack([np.eye(2), 2 * np.eye(2), np.array([[0.0, 1.0], [1.0, 0.0]])])
    inject_jacobian(tape, x, out, jac)
    w = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    grads = tape.backward(tape.sum(tape.mul(out, tape.const(w))))
    expect = np.stack([jac[b].T @ w[b] for b in range(3)])
    assert np.allclose(grads[x.node_id], expect)


def test_eager_matches_tape_values():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 5))
    b = rng.normal(size=5)
    eager = Eager()
    ev = eager.tanh(eager.affine(x, w, b))
    tape = Tape()
    tv = tape.tanh(tape.affine(tape.leaf(x), tape.leaf(w), tape.leaf(b)))
    assert np.array_equal(ev, tv.value)
