"""CND-modified training loss."""

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import StructuralError

Z_AXIS = np.array([0.0, 0.0, 1.0])
DELTA_FLOOR = 0.0025  # 0.05 squared, written exactly


def point_weight_targets(points, n_tilde):
    """Target weights ``exp(-(p . n)^2 / delta^2)`` for ``(B, M, 3)`` points.

    ``delta = max(0.05^2, 0.3 * mean((p . n)^2))`` per patch. Returns
    ``(weights, delta)``.
    """
    d2 = np.einsum("bmi,bi->bm", points, n_tilde) ** 2
    delta = np.maximum(DELTA_FLOOR, 0.3 * d2.mean(axis=1))
    return np.exp(-d2 / (delta[:, None] ** 2)), delta


def loss_total(pred, w_hat, R, points, n_tilde, weights=(0.1, 0.1, 0.5, 1.0)):
    """Weighted sum of the four loss terms, averaged over the batch.

    ``pred`` ``(B, 3)`` and ``n_tilde`` ``(B, 3)`` share the patch frame;
    ``R`` is the QSTN rotation, ``points`` the ``(B, M, 3)`` downsampled
    patch and ``w_hat`` the ``(B, M)`` predicted point weights. Returns the
    total tensor and a dict of per-term batch means.
    """
    n_tilde = np.asarray(n_tilde, dtype=np.float64)
    B = n_tilde.shape[0]
    if np.any(np.abs(np.linalg.norm(n_tilde, axis=1) - 1.0) > 1e-6):
        raise StructuralError("loss labels must be unit vectors")
    label = Tensor(n_tilde)
    sine = ad.l2norm(ad.cross3(label, pred), axis=-1)

    RRt = ad.matmul(R, ad.transpose(R, (0, 2, 1)))
    ortho = ad.sum(ad.reshape(ad.square(ad.sub(Tensor(np.broadcast_to(np.eye(3), (B, 3, 3))), RRt)), (B, 9)), 1)

    label_rot = ad.reshape(ad.matmul(Tensor(n_tilde.reshape(B, 1, 3)), R), (B, 3))
    z_align = ad.l2norm(ad.cross3(label_rot, Tensor(np.broadcast_to(Z_AXIS, (B, 3)))), axis=-1)

    target, _ = point_weight_targets(np.asarray(points, dtype=np.float64), n_tilde)
    weight_fit = ad.mean(ad.square(ad.sub(Tensor(target), w_hat)), 1)

    terms = [ad.mean(t) for t in (sine, ortho, z_align, weight_fit)]
    total = terms[0] * 0.0
    for lam, t in zip(weights, terms):
        total = ad.add(total, ad.scale(t, lam))
    parts = {name: t.item() for name, t in zip(("l1", "l2", "l3", "l4"), terms)}
    return total, parts
