"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Scope is deliberately small: scalars, vectors and matrices, the primitives
needed for an MLP controller, camera projection, reward terms and rotation
kinematics. No broadcasting (except the explicit bias op), no higher-order
derivatives. Batches of per-environment quantities are plain matrices with
the batch as the leading axis; batches of rotations travel as (B, 9) blocks
in column-major layout with dedicated primitives.

The tape records one node per primitive in execution order. ``backward``
walks the node list strictly in reverse and accumulates adjoints in that
fixed order, so replaying a tape is bitwise reproducible.

State transitions whose true derivative is supplied externally (surrogate
dynamics Jacobians) enter the graph through ``custom_link`` nodes; their
per-input Jacobians are attached with ``inject_jacobian``.
"""

from __future__ import annotations

import numpy as np

from . import so3


class Var:
    """Handle to a tape node: holds the forward value and gradient flags."""

    __slots__ = ("value", "node_id", "requires_grad", "tape")

    def __init__(self, value: np.ndarray, node_id: int, requires_grad: bool, tape: "Tape"):
        self.value = value
        self.node_id = node_id
        self.requires_grad = requires_grad
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(id={self.node_id}, shape={self.value.shape}, rg={self.requires_grad})"


class _Node:
    __slots__ = ("op", "inputs", "value", "aux", "rg")

    def __init__(self, op, inputs, value, aux, rg):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.aux = aux
        self.rg = rg


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tape:
    """Ordered record of primitive operations plus adjoint buffers."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._adj: list[np.ndarray | None] = []

    # ------------------------------------------------------------- lifecycle

    def reset(self) -> None:
        """Drop all nodes and zero out gradient state."""
        self.nodes.clear()
        self._adj = []

    @staticmethod
    def value(h):
        """Forward value of a handle (interface shared with Eager)."""
        return h.value

    def __len__(self) -> int:
        return len(self.nodes)

    # ------------------------------------------------------------- creation

    def leaf(self, value, requires_grad: bool = False) -> Var:
        """Enter an input array onto the tape."""
        arr = _as_array(value)
        node = _Node("leaf", (), arr, None, requires_grad)
        self.nodes.append(node)
        return Var(arr, len(self.nodes) - 1, requires_grad, self)

    def const(self, value) -> Var:
        """Convenience: a leaf that never receives gradient."""
        return self.leaf(value, requires_grad=False)

    # ------------------------------------------------------------- recording

    def record(self, kind: str, inputs: list[Var], *, aux=None, out_value=None) -> Var:
        """Record one primitive; computes the output and grows the tape.

        ``out_value`` is only accepted for ``custom_link`` nodes, where the
        output is produced outside the tape.
        """
        fwd = _FORWARD.get(kind)
        if fwd is None:
            raise ValueError(f"unknown op kind: {kind!r}")
        for v in inputs:
            if v.tape is not self:
                raise ValueError("input Var does not live on this tape")
        vals = [v.value for v in inputs]
        if kind == "custom_link":
            if out_value is None:
                raise ValueError("custom_link requires an externally computed output value")
            value = _as_array(out_value)
            aux = {"jacs": [None] * len(inputs)}
        else:
            if out_value is not None:
                raise ValueError("out_value is only valid for custom_link nodes")
            value = fwd(vals, aux)
        rg = any(v.requires_grad for v in inputs)
        node = _Node(kind, tuple(v.node_id for v in inputs), value, aux, rg)
        self.nodes.append(node)
        return Var(value, len(self.nodes) - 1, rg, self)

    # convenience wrappers -- thin, all go through record()

    def add(self, a, b):
        return self.record("add", [a, b])

    def sub(self, a, b):
        return self.record("sub", [a, b])

    def mul(self, a, b):
        return self.record("mul", [a, b])

    def div(self, a, b):
        return self.record("div", [a, b])

    def matmul(self, a, b):
        return self.record("matmul", [a, b])

    def matvec(self, a, b):
        return self.record("matvec", [a, b])

    def smul(self, a, c: float):
        return self.record("smul", [a], aux=float(c))

    def tanh(self, a):
        return self.record("tanh", [a])

    def exp(self, a):
        return self.record("exp", [a])

    def log(self, a):
        return self.record("log", [a])

    def sqrt(self, a):
        return self.record("sqrt", [a])

    def sum(self, a, axis=None):
        return self.record("sum", [a], aux=axis)

    def concat(self, parts, axis=0):
        return self.record("concat", list(parts), aux=axis)

    def slice(self, a, start: int, stop: int, axis=0):
        return self.record("slice", [a], aux=(start, stop, axis))

    def huber(self, a, delta: float):
        return self.record("huber", [a], aux=float(delta))

    def clamp(self, a, lo: float, hi: float):
        return self.record("clamp", [a], aux=(float(lo), float(hi)))

    def minimum(self, a, b):
        return self.record("minimum", [a, b])

    def cross(self, a, b):
        return self.record("cross", [a, b])

    def transpose(self, a):
        return self.record("transpose", [a])

    def add_bias(self, x, b):
        return self.record("add_bias", [x, b])

    def affine(self, x, w, b):
        return self.record("affine", [x, w, b])

    def repeat_rows(self, a, k: int):
        return self.record("repeat_rows", [a], aux=int(k))

    def reshape(self, a, shape):
        return self.record("reshape", [a], aux=tuple(shape))

    def rot_exp(self, w):
        return self.record("rot_exp", [w])

    def rot_mul(self, a, b):
        return self.record("rot_mul", [a, b])

    def rot_apply(self, r, v):
        return self.record("rot_apply", [r, v])

    def rot_apply_t(self, r, v):
        return self.record("rot_apply_t", [r, v])

    def custom_link(self, inputs: list[Var], out_value) -> Var:
        """State transition computed outside the tape; Jacobians injected later."""
        return self.record("custom_link", inputs, out_value=out_value)

    # ------------------------------------------------------------- backward

    def backward(self, root: Var) -> dict[int, np.ndarray]:
        """Reverse sweep from a scalar root.

        Returns a map node-id -> adjoint for every requires-grad leaf;
        leaves the full adjoint buffer available through ``adjoint``.
        """
        if root.tape is not self:
            raise ValueError("root does not live on this tape")
        if root.value.ndim != 0:
            raise ValueError("backward root must be a scalar")
        n = len(self.nodes)
        adj: list[np.ndarray | None] = [None] * n
        adj[root.node_id] = np.ones(())
        nodes = self.nodes
        for i in range(root.node_id, -1, -1):
            node = nodes[i]
            g = adj[i]
            if g is None or not node.rg or not node.inputs:
                continue
            grads = _BACKWARD[node.op](node, nodes, g)
            for inp_id, gi in zip(node.inputs, grads):
                if gi is None or not nodes[inp_id].rg:
                    continue
                cur = adj[inp_id]
                adj[inp_id] = gi if cur is None else cur + gi
        self._adj = adj
        out = {}
        for i, node in enumerate(nodes):
            if node.op == "leaf" and node.rg:
                out[i] = adj[i] if adj[i] is not None else np.zeros_like(node.value)
        return out

    def adjoint(self, var: Var) -> np.ndarray:
        """Adjoint of a node from the most recent backward pass (zero if unvisited)."""
        if not self._adj:
            raise ValueError("no backward pass has been run")
        g = self._adj[var.node_id]
        return g if g is not None else np.zeros_like(var.value)


class Eager:
    """Tape-compatible backend that evaluates primitives immediately.

    Shares the forward implementations with ``Tape`` so code written once
    against this interface produces bitwise-identical values whether or not
    it is being recorded. Handles are plain ndarrays; nothing is stored.
    """

    @staticmethod
    def value(h):
        return h

    def leaf(self, value, requires_grad: bool = False):
        return _as_array(value)

    def const(self, value):
        return _as_array(value)

    def record(self, kind, inputs, *, aux=None, out_value=None):
        if kind == "custom_link":
            return _as_array(out_value)
        return _FORWARD[kind]([_as_array(v) for v in inputs], aux)

    def custom_link(self, inputs, out_value):
        return _as_array(out_value)

    def add(self, a, b):
        return self.record("add", [a, b])

    def sub(self, a, b):
        return self.record("sub", [a, b])

    def mul(self, a, b):
        return self.record("mul", [a, b])

    def div(self, a, b):
        return self.record("div", [a, b])

    def matmul(self, a, b):
        return self.record("matmul", [a, b])

    def matvec(self, a, b):
        return self.record("matvec", [a, b])

    def smul(self, a, c):
        return self.record("smul", [a], aux=float(c))

    def tanh(self, a):
        return self.record("tanh", [a])

    def exp(self, a):
        return self.record("exp", [a])

    def log(self, a):
        return self.record("log", [a])

    def sqrt(self, a):
        return self.record("sqrt", [a])

    def sum(self, a, axis=None):
        return self.record("sum", [a], aux=axis)

    def concat(self, parts, axis=0):
        return self.record("concat", list(parts), aux=axis)

    def slice(self, a, start, stop, axis=0):
        return self.record("slice", [a], aux=(start, stop, axis))

    def huber(self, a, delta):
        return self.record("huber", [a], aux=float(delta))

    def clamp(self, a, lo, hi):
        return self.record("clamp", [a], aux=(float(lo), float(hi)))

    def minimum(self, a, b):
        return self.record("minimum", [a, b])

    def cross(self, a, b):
        return self.record("cross", [a, b])

    def transpose(self, a):
        return self.record("transpose", [a])

    def add_bias(self, x, b):
        return self.record("add_bias", [x, b])

    def affine(self, x, w, b):
        return self.record("affine", [x, w, b])

    def repeat_rows(self, a, k):
        return self.record("repeat_rows", [a], aux=int(k))

    def reshape(self, a, shape):
        return self.record("reshape", [a], aux=tuple(shape))

    def rot_exp(self, w):
        return self.record("rot_exp", [w])

    def rot_mul(self, a, b):
        return self.record("rot_mul", [a, b])

    def rot_apply(self, r, v):
        return self.record("rot_apply", [r, v])

    def rot_apply_t(self, r, v):
        return self.record("rot_apply_t", [r, v])


def var_value(h):
    """Forward value of a handle from either backend."""
    return h.value if isinstance(h, Var) else h


def inject_jacobian(tape: Tape, input_var: Var, output_var: Var, jacobian: np.ndarray) -> None:
    """Attach d(output)/d(input) to a custom_link node.

    For vector input (n,) and output (m,) the Jacobian is (m, n). For batched
    matrices (B, n) -> (B, m) it is a (B, m, n) stack; backward applies
    J[b]^T g[b] per row, so cross-environment terms are structurally zero.
    """
    node = tape.nodes[output_var.node_id]
    if node.op != "custom_link":
        raise ValueError("inject_jacobian target must be a custom_link output")
    try:
        pos = node.inputs.index(input_var.node_id)
    except ValueError:
        raise ValueError("input Var is not an input of this custom_link node") from None
    jac = _as_array(jacobian)
    in_val = tape.nodes[input_var.node_id].value
    out_val = node.value
    if in_val.ndim == 1 and out_val.ndim == 1:
        want = (out_val.shape[0], in_val.shape[0])
    elif in_val.ndim == 2 and out_val.ndim == 2 and in_val.shape[0] == out_val.shape[0]:
        want = (in_val.shape[0], out_val.shape[1], in_val.shape[1])
    else:
        raise ValueError(
            f"unsupported custom_link shapes: input {in_val.shape}, output {out_val.shape}"
        )
    if jac.shape != want:
        raise ValueError(f"jacobian shape {jac.shape} does not match expected {want}")
    node.aux["jacs"][pos] = jac


# ---------------------------------------------------------------- forwards

def _same_shape(vals, kind):
    a, b = vals
    if a.shape != b.shape:
        raise ValueError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


def _fwd_add(vals, aux):
    _same_shape(vals, "add")
    return vals[0] + vals[1]


def _fwd_sub(vals, aux):
    _same_shape(vals, "sub")
    return vals[0] - vals[1]


def _fwd_mul(vals, aux):
    _same_shape(vals, "mul")
    return vals[0] * vals[1]


def _fwd_div(vals, aux):
    _same_shape(vals, "div")
    return vals[0] / vals[1]


def _fwd_minimum(vals, aux):
    _same_shape(vals, "minimum")
    return np.minimum(vals[0], vals[1])


def _fwd_matmul(vals, aux):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return a @ b


def _fwd_matvec(vals, aux):
    a, v = vals
    if a.ndim != 2 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ValueError(f"matvec: incompatible shapes {a.shape} @ {v.shape}")
    return a @ v


def _fwd_smul(vals, aux):
    return vals[0] * aux


def _fwd_tanh(vals, aux):
    return np.tanh(vals[0])


def _fwd_exp(vals, aux):
    return np.exp(vals[0])


def _fwd_log(vals, aux):
    return np.log(vals[0])


def _fwd_sqrt(vals, aux):
    return np.sqrt(vals[0])


def _fwd_sum(vals, aux):
    a = vals[0]
    if aux is None:
        return np.sum(a)
    if aux == 1:
        if a.ndim != 2:
            raise ValueError("sum over axis 1 requires a matrix input")
        return np.sum(a, axis=1, keepdims=True)
    raise ValueError(f"sum: unsupported axis {aux}")


def _fwd_concat(vals, aux):
    ndim = vals[0].ndim
    for v in vals:
        if v.ndim != ndim:
            raise ValueError("concat: mixed ranks")
    return np.concatenate(vals, axis=aux)


def _fwd_slice(vals, aux):
    start, stop, axis = aux
    a = vals[0]
    if axis == 0:
        return a[start:stop].copy()
    if axis == 1:
        if a.ndim != 2:
            raise ValueError("slice on axis 1 requires a matrix input")
        return a[:, start:stop].copy()
    raise ValueError(f"slice: unsupported axis {axis}")


def _fwd_huber(vals, aux):
    a = vals[0]
    delta = aux
    absa = np.abs(a)
    return np.where(absa <= delta, 0.5 * a * a, delta * (absa - 0.5 * delta))


def _fwd_clamp(vals, aux):
    lo, hi = aux
    return np.clip(vals[0], lo, hi)


def _fwd_cross(vals, aux):
    a, b = vals
    _same_shape(vals, "cross")
    if a.shape[-1] != 3:
        raise ValueError("cross requires 3-vectors")
    return np.cross(a, b)


def _fwd_transpose(vals, aux):
    a = vals[0]
    if a.ndim != 2:
        raise ValueError("transpose requires a matrix")
    return a.T.copy()


def _fwd_add_bias(vals, aux):
    x, b = vals
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ValueError(f"add_bias: incompatible shapes {x.shape} + {b.shape}")
    return x + b


def _fwd_affine(vals, aux):
    # fused x @ w + b, the linear-layer hot path
    x, w, b = vals
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] \
            or b.ndim != 1 or b.shape[0] != w.shape[1]:
        raise ValueError(
            f"affine: incompatible shapes {x.shape} @ {w.shape} + {b.shape}")
    out = x @ w
    out += b
    return out


def _fwd_repeat_rows(vals, aux):
    a = vals[0]
    if a.ndim != 2:
        raise ValueError("repeat_rows requires a matrix")
    return np.repeat(a, aux, axis=0)


def _fwd_reshape(vals, aux):
    a = vals[0]
    if a.size != int(np.prod(aux)):
        raise ValueError(f"reshape: size mismatch {a.shape} -> {aux}")
    return a.reshape(aux).copy()


def _fwd_rot_exp(vals, aux):
    w = vals[0]
    if w.ndim != 2 or w.shape[1] != 3:
        raise ValueError("rot_exp expects (B, 3) rotation vectors")
    return so3.mat_to_vec9(so3.exp_so3(w))


def _check_vec9(a, name):
    if a.ndim != 2 or a.shape[1] != 9:
        raise ValueError(f"{name} expects (B, 9) rotation blocks")


def _fwd_rot_mul(vals, aux):
    a, b = vals
    _check_vec9(a, "rot_mul")
    _check_vec9(b, "rot_mul")
    if a.shape[0] != b.shape[0]:
        raise ValueError("rot_mul: batch mismatch")
    return so3.mat_to_vec9(so3.vec9_to_mat(a) @ so3.vec9_to_mat(b))


def _fwd_rot_apply(vals, aux):
    r, v = vals
    _check_vec9(r, "rot_apply")
    if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] != r.shape[0]:
        raise ValueError("rot_apply expects matching (B, 3) vectors")
    return np.einsum("bij,bj->bi", so3.vec9_to_mat(r), v)


def _fwd_rot_apply_t(vals, aux):
    r, v = vals
    _check_vec9(r, "rot_apply_t")
    if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] != r.shape[0]:
        raise ValueError("rot_apply_t expects matching (B, 3) vectors")
    return np.einsum("bji,bj->bi", so3.vec9_to_mat(r), v)


def _fwd_renorm_rot(vals, aux):
    # Gram-Schmidt drift correction; the backward pass treats it as identity
    # because the per-step correction is at rounding level.
    _check_vec9(vals[0], "renorm_rot")
    return so3.mat_to_vec9(so3.orthonormalize(so3.vec9_to_mat(vals[0])))


_FORWARD = {
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "div": _fwd_div,
    "minimum": _fwd_minimum,
    "matmul": _fwd_matmul,
    "matvec": _fwd_matvec,
    "smul": _fwd_smul,
    "tanh": _fwd_tanh,
    "exp": _fwd_exp,
    "log": _fwd_log,
    "sqrt": _fwd_sqrt,
    "sum": _fwd_sum,
    "concat": _fwd_concat,
    "slice": _fwd_slice,
    "huber": _fwd_huber,
    "clamp": _fwd_clamp,
    "cross": _fwd_cross,
    "transpose": _fwd_transpose,
    "add_bias": _fwd_add_bias,
    "affine": _fwd_affine,
    "repeat_rows": _fwd_repeat_rows,
    "reshape": _fwd_reshape,
    "rot_exp": _fwd_rot_exp,
    "rot_mul": _fwd_rot_mul,
    "rot_apply": _fwd_rot_apply,
    "rot_apply_t": _fwd_rot_apply_t,
    "renorm_rot": _fwd_renorm_rot,
    "custom_link": lambda vals, aux: None,  # value supplied by caller
}


# ---------------------------------------------------------------- backwards
# Each returns one gradient per input (None where no gradient flows).

def _bwd_add(node, nodes, g):
    return g, g


def _bwd_sub(node, nodes, g):
    return g, -g


def _bwd_mul(node, nodes, g):
    a, b = (nodes[i].value for i in node.inputs)
    return g * b, g * a


def _bwd_div(node, nodes, g):
    a, b = (nodes[i].value for i in node.inputs)
    ga = g / b
    return ga, -ga * node.value  # d(a/b)/db = -a/b^2 = -(a/b)/b


def _bwd_minimum(node, nodes, g):
    a, b = (nodes[i].value for i in node.inputs)
    take_a = a <= b  # ties resolve to the first input, deterministically
    return g * take_a, g * ~take_a


def _bwd_matmul(node, nodes, g):
    a, b = (nodes[i].value for i in node.inputs)
    return g @ b.T, a.T @ g


def _bwd_matvec(node, nodes, g):
    a, v = (nodes[i].value for i in node.inputs)
    return np.outer(g, v), a.T @ g


def _bwd_smul(node, nodes, g):
    return (g * node.aux,)


def _bwd_tanh(node, nodes, g):
    y = node.value
    return (g * (1.0 - y * y),)


def _bwd_exp(node, nodes, g):
    return (g * node.value,)


def _bwd_log(node, nodes, g):
    return (g / nodes[node.inputs[0]].value,)


def _bwd_sqrt(node, nodes, g):
    return (g * (0.5 / node.value),)


def _bwd_sum(node, nodes, g):
    a = nodes[node.inputs[0]].value
    if node.aux is None:
        return (g * np.ones_like(a),)
    return (np.ascontiguousarray(np.broadcast_to(g, a.shape)),)


def _bwd_concat(node, nodes, g):
    axis = node.aux
    sizes = [nodes[i].value.shape[axis] for i in node.inputs]
    splits = np.cumsum(sizes)[:-1]
    return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))


def _bwd_slice(node, nodes, g):
    start, stop, axis = node.aux
    a = nodes[node.inputs[0]].value
    out = np.zeros_like(a)
    if axis == 0:
        out[start:stop] = g
    else:
        out[:, start:stop] = g
    return (out,)


def _bwd_huber(node, nodes, g):
    a = nodes[node.inputs[0]].value
    delta = node.aux
    return (g * np.clip(a, -delta, delta),)


def _bwd_clamp(node, nodes, g):
    lo, hi = node.aux
    a = nodes[node.inputs[0]].value
    inside = (a > lo) & (a < hi)
    return (g * inside,)


def _bwd_cross(node, nodes, g):
    a, b = (nodes[i].value for i in node.inputs)
    return np.cross(b, g), np.cross(g, a)


def _bwd_transpose(node, nodes, g):
    return (g.T.copy(),)


def _bwd_add_bias(node, nodes, g):
    return g, g.sum(axis=0)


def _bwd_affine(node, nodes, g):
    x, w, _ = (nodes[i].value for i in node.inputs)
    return g @ w.T, x.T @ g, g.sum(axis=0)


def _bwd_repeat_rows(node, nodes, g):
    k = node.aux
    a = nodes[node.inputs[0]].value
    return (g.reshape(a.shape[0], k, a.shape[1]).sum(axis=1),)


def _bwd_reshape(node, nodes, g):
    a = nodes[node.inputs[0]].value
    return (g.reshape(a.shape),)


def _bwd_rot_exp(node, nodes, g):
    w = nodes[node.inputs[0]].value
    dexp = so3.dexp_so3(w)  # (B, 9, 3)
    return (np.einsum("bkj,bk->bj", dexp, g),)


def _bwd_rot_mul(node, nodes, g):
    a9, b9 = (nodes[i].value for i in node.inputs)
    a = so3.vec9_to_mat(a9)
    b = so3.vec9_to_mat(b9)
    gm = so3.vec9_to_mat(g)
    ga = np.einsum("bij,bkj->bik", gm, b)  # G B^T
    gb = np.einsum("bji,bjk->bik", a, gm)  # A^T G
    return so3.mat_to_vec9(ga), so3.mat_to_vec9(gb)


def _bwd_rot_apply(node, nodes, g):
    r9, v = (nodes[i].value for i in node.inputs)
    r = so3.vec9_to_mat(r9)
    gr = np.einsum("bi,bj->bij", g, v)  # g v^T
    gv = np.einsum("bji,bj->bi", r, g)  # R^T g
    return so3.mat_to_vec9(gr), gv


def _bwd_rot_apply_t(node, nodes, g):
    r9, v = (nodes[i].value for i in node.inputs)
    r = so3.vec9_to_mat(r9)
    gr = np.einsum("bi,bj->bij", v, g)  # v g^T
    gv = np.einsum("bij,bj->bi", r, g)  # R g
    return so3.mat_to_vec9(gr), gv


def _bwd_custom_link(node, nodes, g):
    jacs = node.aux["jacs"]
    grads = []
    for pos, inp_id in enumerate(node.inputs):
        if not nodes[inp_id].rg:
            grads.append(None)
            continue
        jac = jacs[pos]
        if jac is None:
            raise ValueError("custom_link backward reached an input with no injected jacobian")
        if jac.ndim == 2:
            grads.append(jac.T @ g)
        else:
            grads.append(np.einsum("bij,bi->bj", jac, g))
    return tuple(grads)


_BACKWARD = {
    "add": _bwd_add,
    "sub": _bwd_sub,
    "mul": _bwd_mul,
    "div": _bwd_div,
    "minimum": _bwd_minimum,
    "matmul": _bwd_matmul,
    "matvec": _bwd_matvec,
    "smul": _bwd_smul,
    "tanh": _bwd_tanh,
    "exp": _bwd_exp,
    "log": _bwd_log,
    "sqrt": _bwd_sqrt,
    "sum": _bwd_sum,
    "concat": _bwd_concat,
    "slice": _bwd_slice,
    "huber": _bwd_huber,
    "clamp": _bwd_clamp,
    "cross": _bwd_cross,
    "transpose": _bwd_transpose,
    "add_bias": _bwd_add_bias,
    "affine": _bwd_affine,
    "repeat_rows": _bwd_repeat_rows,
    "reshape": _bwd_reshape,
    "rot_exp": _bwd_rot_exp,
    "rot_mul": _bwd_rot_mul,
    "rot_apply": _bwd_rot_apply,
    "rot_apply_t": _bwd_rot_apply_t,
    "renorm_rot": lambda node, nodes, g: (g,),
    "custom_link": _bwd_custom_link,
}
