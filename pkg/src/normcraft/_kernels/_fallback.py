"""Pure numpy implementations of the hot kernels.

Layouts match ``_native``: batched point sets are ``(B, N, D)`` float64,
neighbor indices are ``(B, Q, k)`` int64, and reductions run over the middle
axis of an ``(outer, K, inner)`` array.
"""

import numpy as np


def knn(ref, qry, k):
    """Indices of the ``k`` nearest ``ref`` points for every ``qry`` point.

    Ordered by ascending squared distance, ties broken by ascending index.
    """
    diff = qry[:, :, None, :] - ref[:, None, :, :]
    d2 = diff[..., 0] * diff[..., 0]
    for d in range(1, ref.shape[2]):
        d2 = d2 + diff[..., d] * diff[..., d]
    order = np.argsort(d2, axis=-1, kind="stable")
    return np.ascontiguousarray(order[:, :, :k], dtype=np.int64)


def scatter_add(grad, idx, n):
    B = grad.shape[0]
    out = np.zeros((B, n, grad.shape[3]), dtype=np.float64)
    batch = np.broadcast_to(np.arange(B)[:, None, None], idx.shape)
    np.add.at(out, (batch, idx), grad)
    return out


def max_reduce(x):
    arg = np.argmax(x, axis=1)
    out = np.take_along_axis(x, arg[:, None, :], axis=1)[:, 0, :]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def max_reduce_backward(grad, arg, k):
    out = np.zeros((grad.shape[0], k, grad.shape[1]), dtype=np.float64)
    np.put_along_axis(out, arg[:, None, :], grad[:, None, :], axis=1)
    return out
