"""Dense float64 tensors with reverse-mode differentiation.

Each op computes its forward value with numpy and, when any input requires a
gradient, records a closure that maps the output gradient to input gradients.
Only scalar-with-tensor broadcasting is implicit; everything else goes through
``expand``/``reshape``.
"""

import threading
from contextlib import contextmanager

import numpy as np

from .. import _kernels
from ..errors import StructuralError

# per thread, so inference running in a worker pool cannot switch recording off elsewhere
_mode = threading.local()


def _grad_enabled():
    return getattr(_mode, "grad", True)


def _kinks():
    return getattr(_mode, "kinks", None)


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev, _mode.grad = _grad_enabled(), False
    try:
        yield
    finally:
        _mode.grad = prev


@contextmanager
def record_kinks():
    """Collect the discrete branch choices (relu masks, max-pool winners) of every op run inside."""
    prev, _mode.kinks = _kinks(), []
    try:
        yield _mode.kinks
    finally:
        _mode.kinks = prev


def _log_kink(arr):
    log = _kinks()
    if log is not None:
        log.append(np.array(arr, copy=True))


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def backward(self):
        if self.data.size != 1 or self.ndim != 0:
            raise StructuralError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out.requires_grad = _grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _binary_shapes(a, b, opname):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise StructuralError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


def _unbroadcast(g, shape):
    return g if g.shape == shape else np.asarray(g.sum(), dtype=np.float64).reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward, "mul")


def scale(x, c):
    """Multiply by a Python number."""
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def relu(x):
    mask = x.data > 0
    _log_kink(mask)
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x):
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def exp(x):
    e = np.exp(x.data)
    return _make(e, (x,), lambda g: (g * e,), "exp")


def square(x):
    d = x.data
    return _make(d * d, (x,), lambda g: (2.0 * g * d,), "square")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """``a @ b`` where ``b`` is either a ``(K, M)`` weight or a batch matching ``a``'s leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise StructuralError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    if b.ndim == 2:
        ad, bd = a.data, b.data
        a2 = ad.reshape(-1, ad.shape[-1])

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _make((a2 @ bd).reshape(ad.shape[:-1] + bd.shape[1:]), (a, b), backward, "matmul")
    if a.shape[:-2] != b.shape[:-2]:
        raise StructuralError(f"matmul: batch dims differ {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def backward_batched(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make(ad @ bd, (a, b), backward_batched, "matmul")


def dense(x, w, b=None, activation=None):
    """``x @ w + b`` over the trailing axis, optionally followed by ReLU, as one graph node."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise StructuralError(f"dense: shape mismatch {x.shape} vs {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise StructuralError(f"dense: bias shape {b.shape} for {w.shape[1]} outputs")
    if activation not in (None, "relu"):
        raise StructuralError(f"dense: unknown activation {activation!r}")
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    if b is not None:
        out += b.data
    mask = None
    if activation == "relu":
        mask = out > 0
        _log_kink(mask)
        out *= mask
    shape = x.shape[:-1] + (w.shape[1],)
    wd = w.data

    def backward(g):
        g2 = g.reshape(-1, wd.shape[1])
        if mask is not None:
            g2 = g2 * mask
        gx = (g2 @ wd.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        grads = (gx, gw)
        if b is not None:
            grads += (g2.sum(axis=0) if b.requires_grad else None,)
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _make(out.reshape(shape), parents, backward, "dense")


def cross3(a, b):
    """Cross product over a trailing axis of length 3."""
    if a.shape != b.shape or a.shape[-1] != 3:
        raise StructuralError(f"cross3: need equal shapes ending in 3, got {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        # d(a x b)/da applied to g is b x g; d/db is g x a
        return np.cross(bd, g), np.cross(g, ad)

    return _make(np.cross(ad, bd), (a, b), backward, "cross3")


def l2norm(x, axis=-1):
    """Euclidean norm over ``axis`` (reduced). Gradient at an exactly zero vector is taken as 0."""
    axis = _axis(x, axis)
    n = np.sqrt(np.sum(x.data * x.data, axis=axis))
    xd = x.data

    def backward(g):
        safe = np.where(n > 0, n, 1.0)
        return (np.expand_dims(g / safe * (n > 0), axis) * xd,)

    return _make(n, (x,), backward, "l2norm")


def normalize(x, axis=-1, eps=1e-12):
    """``x / max(||x||, eps)`` along ``axis``; unit vectors pass through unchanged."""
    axis = _axis(x, axis)
    xd = x.data
    n = np.sqrt(np.sum(xd * xd, axis=axis, keepdims=True))
    big = n > eps
    d = np.where(big, n, eps)
    y = xd / d

    def backward(g):
        # above eps: dy = (g - y <g, y>) / n; below it the divisor is constant
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return ((g - y * dot * big) / d,)

    return _make(y, (x,), backward, "normalize")


# ---------------------------------------------------------------- reductions


def _axis(x, axis):
    if not -x.ndim <= axis < x.ndim:
        raise StructuralError(f"axis {axis} invalid for shape {x.shape}")
    return axis % x.ndim


def sum(x, axis=None):
    if axis is None:
        shape = x.shape
        return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, g, dtype=np.float64),), "sum")
    axis = _axis(x, axis)
    shape = x.shape
    return _make(
        x.data.sum(axis=axis),
        (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),),
        "sum",
    )


def mean(x, axis=None):
    n = x.data.size if axis is None else x.shape[_axis(x, axis)]
    return scale(sum(x, axis), 1.0 / n)


def avgpool(x, axis):
    """Mean over ``axis`` (reduced)."""
    return mean(x, axis)


def maxpool(x, axis):
    """Max over ``axis`` (reduced). Ties send the gradient to the lowest index."""
    axis = _axis(x, axis)
    shape = x.shape
    k = shape[axis]
    outer = int(np.prod(shape[:axis], dtype=np.int64))
    inner = int(np.prod(shape[axis + 1 :], dtype=np.int64))
    out, arg = _kernels.max_reduce(x.data.reshape(outer, k, inner))
    _log_kink(arg)
    out_shape = shape[:axis] + shape[axis + 1 :]

    def backward(g):
        return (_kernels.max_reduce_backward(g.reshape(outer, inner), arg, k).reshape(shape),)

    return _make(out.reshape(out_shape), (x,), backward, "maxpool")


def softmax(x, axis):
    axis = _axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _make(s, (x,), backward, "softmax")


# ---------------------------------------------------------------- shape ops


def reshape(x, shape):
    shape = tuple(shape)
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise StructuralError(f"reshape: cannot view {old} as {shape}") from exc
    return _make(data, (x,), lambda g: (g.reshape(old),), "reshape")


def expand(x, shape):
    """Broadcast size-1 axes of ``x`` to ``shape`` (same rank required)."""
    shape = tuple(shape)
    if x.ndim != len(shape) or any(s != t and s != 1 for s, t in zip(x.shape, shape)):
        raise StructuralError(f"expand: cannot expand {x.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(x.shape, shape)) if s != t)
    return _make(
        np.broadcast_to(x.data, shape),
        (x,),
        lambda g: (g.sum(axis=axes, keepdims=True) if axes else g,),
        "expand",
    )


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    axis = _axis(ref, axis)
    for t in tensors[1:]:
        if t.ndim != ref.ndim or t.shape[:axis] + t.shape[axis + 1 :] != ref.shape[:axis] + ref.shape[axis + 1 :]:
            raise StructuralError(f"concat: shape mismatch {ref.shape} vs {t.shape} on axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def narrow(x, axis, start, length):
    """Slice ``[start, start + length)`` along ``axis``."""
    axis = _axis(x, axis)
    if start < 0 or length < 0 or start + length > x.shape[axis]:
        raise StructuralError(f"narrow: [{start}, {start + length}) out of range for axis {axis} of {x.shape}")
    sl = (slice(None),) * axis + (slice(start, start + length),)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape, dtype=np.float64)
        out[sl] = g
        return (out,)

    return _make(x.data[sl], (x,), backward, "narrow")


def gather(x, idx):
    """Rows of a batched ``(B, N, C)`` tensor picked by ``(B, Q, k)`` indices -> ``(B, Q, k, C)``."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.ndim != 3 or idx.ndim != 3 or idx.shape[0] != x.shape[0]:
        raise StructuralError(f"gather: need (B,N,C) data and (B,Q,k) indices, got {x.shape} and {idx.shape}")
    n = x.shape[1]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise StructuralError(f"gather: index out of range for {n} rows")
    batch = np.arange(x.shape[0])[:, None, None]
    return _make(x.data[batch, idx], (x,), lambda g: (_kernels.scatter_add(g, idx, n),), "gather")


def edge_sum(center, neighbor, idx, extra=None, activation=None):
    """``center_q + neighbor_idx[q, j] (+ extra_qj)`` -> ``(B, Q, k, C)``, optionally through ReLU.

    Equivalent to ``expand`` + ``gather`` + ``add`` (+ ``relu``) in a single node.
    """
    center, neighbor = as_tensor(center), as_tensor(neighbor)
    idx = np.asarray(idx, dtype=np.int64)
    B, Q, C = center.shape
    if neighbor.ndim != 3 or neighbor.shape[0] != B or neighbor.shape[2] != C or idx.shape[:2] != (B, Q):
        raise StructuralError(f"edge_sum: shapes {center.shape}, {neighbor.shape}, {idx.shape} disagree")
    n, k = neighbor.shape[1], idx.shape[2]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise StructuralError(f"edge_sum: index out of range for {n} rows")
    if extra is not None and extra.shape != (B, Q, k, C):
        raise StructuralError(f"edge_sum: extra has shape {extra.shape}, expected {(B, Q, k, C)}")
    out = neighbor.data[np.arange(B)[:, None, None], idx]
    out += center.data[:, :, None, :]
    if extra is not None:
        out += extra.data
    mask = None
    if activation == "relu":
        mask = out > 0
        _log_kink(mask)
        out *= mask
    elif activation is not None:
        raise StructuralError(f"edge_sum: unknown activation {activation!r}")

    def backward(g):
        if mask is not None:
            g = g * mask
        grads = (g.sum(axis=2) if center.requires_grad else None,
                 _kernels.scatter_add(g, idx, n) if neighbor.requires_grad else None)
        if extra is not None:
            grads += (g,)
        return grads

    parents = (center, neighbor) if extra is None else (center, neighbor, extra)
    return _make(out, parents, backward, "edge_sum")


def _quat_forms():
    # R_ij = q^T A_ij q for q = (w, x, y, z); exact rotation when |q| = 1
    A = np.zeros((3, 3, 4, 4))
    w, x, y, z = range(4)

    def put(i, j, a, b, c):
        A[i, j, a, b] += c / 2.0
        A[i, j, b, a] += c / 2.0

    for i, signs in enumerate([(1, 1, -1, -1), (1, -1, 1, -1), (1, -1, -1, 1)]):
        for a, s in enumerate(signs):
            put(i, i, a, a, s)
    put(0, 1, x, y, 2), put(0, 1, w, z, -2)
    put(0, 2, x, z, 2), put(0, 2, w, y, 2)
    put(1, 0, x, y, 2), put(1, 0, w, z, 2)
    put(1, 2, y, z, 2), put(1, 2, w, x, -2)
    put(2, 0, x, z, 2), put(2, 0, w, y, -2)
    put(2, 1, y, z, 2), put(2, 1, w, x, 2)
    return A


_QUAT_A = _quat_forms()


def quat_to_rotmat(q):
    """``(B, 4)`` quaternions ``(w, x, y, z)`` -> ``(B, 3, 3)`` rotation matrices."""
    if q.ndim != 2 or q.shape[1] != 4:
        raise StructuralError(f"quat_to_rotmat: need (B, 4), got {q.shape}")
    qd = q.data
    out = np.einsum("ba,ijac,bc->bij", qd, _QUAT_A, qd)
    return _make(out, (q,), lambda g: (2.0 * np.einsum("bij,ijac,bc->ba", g, _QUAT_A, qd),), "quat_to_rotmat")
