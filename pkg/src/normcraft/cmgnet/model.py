"""CMG-Net forward pass on batches of aligned patches.

Batched tensors are ``(B, N, C)``; neighbor index arrays are ``(B, Q, k)``
and are computed once per patch from coordinates, since every rotation the
network applies preserves distances.
"""

from dataclasses import dataclass, field

import numpy as np

from .. import _kernels
from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import StructuralError
from .config import NetConfig

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass
class NetState:
    config: NetConfig
    params: dict
    opt: dict = field(default_factory=dict)

    def arrays(self):
        return {k: v.data for k, v in self.params.items()}

    def n_parameters(self):
        return int(sum(v.data.size for v in self.params.values()))


# ------------------------------------------------------------------ parameters


def layer_shapes(cfg):
    """Ordered ``name -> shape`` for every weight of the network."""
    cl, ch, cd = cfg.feature_widths
    shapes = {}

    def mlp(prefix, sizes):
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            shapes[f"{prefix}.{i}.w"] = (a, b)
            shapes[f"{prefix}.{i}.b"] = (b,)

    mlp("qstn.point", (3, cl, ch))
    mlp("qstn.head", (ch, cl, 4))
    for s in (1, 2):
        for layer in range(cfg.lfe_depth):
            cin = 3 if layer == 0 else cl
            mlp(f"lfe{s}.{layer}.embed", (cin, cl, cl))
            mlp(f"lfe{s}.{layer}.skip", (3 * cl, cl))
    mlp("aff.gate", (cl, cl, cl))
    mlp("aff.out", (cl, ch, ch))
    for h in range(1, len(cfg.hier_scales) + 1):
        mlp(f"hier{h}.point", (ch, ch, ch))
        mlp(f"hier{h}.global", (ch, ch, ch))
        if h % 2 == 1:
            mlp(f"hier{h}.rel", (3, cl, cl))
            local_in = 6 + cl
        else:
            local_in = 6 + ch
        mlp(f"hier{h}.local", (local_in, ch, ch))
        mlp(f"hier{h}.fuse", (3 * ch, ch, ch))
    mlp("pff.rel", (3, cl, cl))
    mlp("pff.skip", (ch + 3 + cl, cd))
    mlp("pff.res", (ch, cd))
    mlp("wnp.score", (cd, cl, 1))
    mlp("wnp.point", (cd, cd, cd))
    mlp("wnp.head", (cd, cl, 3))
    return shapes


def init_state(cfg, seed=None):
    """Glorot-uniform weights, zero biases, identity-quaternion bias on the QSTN head."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    for name, shape in layer_shapes(cfg).items():
        if name.endswith(".w"):
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-bound, bound, size=shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    params["qstn.head.1.b"].data[:] = IDENTITY_QUAT
    return NetState(cfg, params)


def load_state(cfg, arrays):
    """Build a state from ``{name: array}``; every expected tensor must be present with its shape."""
    params = {}
    for name, shape in layer_shapes(cfg).items():
        if name not in arrays:
            raise StructuralError(f"checkpoint lacks tensor {name!r}")
        arr = np.asarray(arrays[name], dtype=np.float64)
        if arr.shape != tuple(shape):
            raise StructuralError(f"tensor {name!r} has shape {arr.shape}, config expects {tuple(shape)}")
        params[name] = Tensor(arr.copy(), requires_grad=True, name=name)
    opt = {k: np.asarray(v).copy() for k, v in arrays.items() if k.startswith("adam.")}
    return NetState(cfg, params, opt)


# ----------------------------------------------------------------- primitives


def linear(x, state, prefix, activation=None):
    return ad.dense(x, state.params[prefix + ".w"], state.params[prefix + ".b"], activation)


def mlp(x, state, prefix):
    """Linear layers with ReLU between them (none after the last)."""
    i = 0
    while f"{prefix}.{i + 1}.w" in state.params:
        x = linear(x, state, f"{prefix}.{i}", "relu")
        i += 1
    return linear(x, state, f"{prefix}.{i}")


def _center(x, k):
    """``(B, Q, C)`` -> ``(B, Q, k, C)`` by repeating each row over a neighbor axis."""
    B, Q, C = x.shape
    return ad.expand(ad.reshape(x, (B, Q, 1, C)), (B, Q, k, C))


def _rows(x, n):
    return x if x.shape[1] == n else ad.narrow(x, 1, 0, n)


def _w(state, prefix, start, length):
    """Rows ``[start, start + length)`` of a layer's weight."""
    w = state.params[prefix + ".w"]
    return w if start == 0 and length == w.shape[0] else ad.narrow(w, 0, start, length)


def _edges(center, neighbor, idx, extra=None):
    """``relu(center_i + neighbor_j (+ extra_ij))`` over neighbor lists -> ``(B, Q, k, C)``.

    A linear layer applied to per-edge inputs built from a point ``i`` and
    its neighbor ``j`` splits into a term of ``i`` and a term of ``j``, so
    both are projected per point and only then spread over the edges.
    """
    return ad.edge_sum(center, neighbor, idx, extra, activation="relu")


def _diff_first(features, idx, state, prefix, towards=True):
    """Activated first layer of an MLP on ``f_j - f_i`` (``f_i - f_j`` if not ``towards``)."""
    w = state.params[prefix + ".0.w"]
    proj = ad.matmul(features, w)
    if not towards:
        proj = ad.scale(proj, -1.0)
    b = state.params[prefix + ".0.b"]
    bias = ad.expand(ad.reshape(b, (1, 1) + b.shape), proj.shape)
    return _edges(ad.sub(bias, proj), proj, idx)


def _mlp_tail(x, state, prefix, first=1):
    """Layers ``first..`` of an MLP whose earlier layers (and their ReLU) were applied already."""
    i = first
    while f"{prefix}.{i}.w" in state.params:
        last = f"{prefix}.{i + 1}.w" not in state.params
        x = linear(x, state, f"{prefix}.{i}", None if last else "relu")
        i += 1
    return x


# --------------------------------------------------------------------- blocks


def qstn_forward(points, state):
    """Per-point MLP, max-pool and a dense head giving a unit quaternion, returned as ``(B, 3, 3)``."""
    feat = mlp(points, state, "qstn.point")
    q = mlp(ad.maxpool(feat, 1), state, "qstn.head")
    return ad.quat_to_rotmat(ad.normalize(q, axis=-1))


def lfe_forward(features, idx, state, prefix):
    """Local feature extraction over the neighbor lists ``idx`` ``(B, N, s)``.

    ``max_j skip(e(f_i), e(f_ij), e(f_i - f_ij))`` where ``e`` is a shared
    MLP and ``skip`` is linear+ReLU over the concatenation plus ``e(f_i)``.
    """
    B, N, _ = features.shape
    if idx.shape[1] != N:
        raise StructuralError(f"LFE: {idx.shape[1]} neighbor lists for {N} points")
    k = idx.shape[2]
    emb = mlp(features, state, prefix + ".embed")
    diff = _mlp_tail(_diff_first(features, idx, state, prefix + ".embed", towards=False), state, prefix + ".embed")
    C = emb.shape[2]
    skip = prefix + ".skip.0"
    # skip(concat(e_i, e_j, diff)) with the weight split by input block
    own = ad.dense(emb, _w(state, skip, 0, C), state.params[skip + ".b"])
    other = ad.dense(emb, _w(state, skip, C, C))
    mixed = _edges(own, other, idx, ad.dense(diff, _w(state, skip, 2 * C, C)))
    # the residual e_i is constant over neighbors, so it is added after the max
    return ad.add(ad.maxpool(mixed, 2), emb)


def aff_forward(f1, f2, state):
    """Attentional fusion of two scales with a per-channel sigmoid gate."""
    if f1.shape != f2.shape:
        raise StructuralError(f"AFF: shape mismatch {f1.shape} vs {f2.shape}")
    B, N, C = f1.shape
    gate = ad.sigmoid(mlp(ad.avgpool(ad.add(f1, f2), 1), state, "aff.gate"))
    gate = ad.expand(ad.reshape(gate, (B, 1, C)), (B, N, C))
    mixed = ad.add(ad.mul(f1, gate), ad.mul(f2, ad.sub(1.0, gate)))
    return mlp(mixed, state, "aff.out")


def hier_fuse_forward(features, coords, idx, state, stage, prev_global=None):
    """One hierarchy stage: global feature, local structures on the kept prefix, residual fusion.

    ``idx`` ``(B, N_next, s)`` lists neighbors among the first ``N_next``
    points. Odd stages describe neighbors geometrically, even stages by
    feature differences. Returns the ``N_next`` fused features and this
    stage's global feature ``(B, C)``.
    """
    B, n_cur, C = features.shape
    n_next, k = idx.shape[1], idx.shape[2]
    if n_next > n_cur:
        raise StructuralError(f"stage {stage}: cannot keep {n_next} of {n_cur} points")
    glob = mlp(ad.maxpool(mlp(features, state, f"hier{stage}.point"), 1), state, f"hier{stage}.global")
    if prev_global is None:
        prev_global = Tensor(np.zeros(glob.shape))
    f_keep = _rows(features, n_next)
    p_keep = _rows(coords, n_next)
    lp = f"hier{stage}.local"
    # local MLP input is concat(p_i, p_i - p_j, extra); its first layer is split per block
    w_abs, w_rel = _w(state, lp + ".0", 0, 3), _w(state, lp + ".0", 3, 3)
    own = ad.add(ad.matmul(p_keep, w_abs), ad.matmul(p_keep, w_rel))
    other = ad.scale(ad.matmul(p_keep, w_rel), -1.0)
    b0 = state.params[lp + ".0.b"]
    own = ad.add(own, ad.expand(ad.reshape(b0, (1, 1) + b0.shape), own.shape))
    if stage % 2 == 1:
        rel = _mlp_tail(_diff_first(p_keep, idx, state, f"hier{stage}.rel", towards=False), state, f"hier{stage}.rel")
        first = _edges(own, other, idx, ad.dense(rel, _w(state, lp + ".0", 6, rel.shape[-1])))
    else:
        w_f = _w(state, lp + ".0", 6, C)
        proj = ad.matmul(f_keep, w_f)
        first = _edges(ad.add(own, proj), ad.sub(other, proj), idx)
    g = ad.add(ad.maxpool(_mlp_tail(first, state, lp), 2), f_keep)
    G = glob.shape[1]

    def spread(t):
        return ad.expand(ad.reshape(t, (B, 1, G)), (B, n_next, G))

    fused = mlp(ad.concat([spread(glob), spread(prev_global), g], axis=-1), state, f"hier{stage}.fuse")
    return ad.add(fused, f_keep), glob


def pff_forward(features, coords, idx, state):
    """Position feature fusion: each point's feature joined with embedded relative neighbor offsets."""
    B, M, C = features.shape
    if idx.shape[1] != M:
        raise StructuralError(f"PFF: {idx.shape[1]} neighbor lists for {M} points")
    k = idx.shape[2]
    emb = _mlp_tail(_diff_first(coords, idx, state, "pff.rel"), state, "pff.rel")
    sk = "pff.skip.0"
    # skip(concat(F_i, p_j - p_i, emb)) with the weight split by input block
    w_rel = _w(state, sk, C, 3)
    proj = ad.matmul(coords, w_rel)
    own = ad.sub(ad.dense(features, _w(state, sk, 0, C), state.params[sk + ".b"]), proj)
    mixed = _edges(own, proj, idx, ad.dense(emb, _w(state, sk, C + 3, emb.shape[-1])))
    return ad.add(ad.maxpool(mixed, 2), linear(features, state, "pff.res.0"))


def wnp_forward(features, state):
    """Softmax point weights and the unit normal predicted from the weighted features."""
    B, M, C = features.shape
    scores = ad.reshape(mlp(features, state, "wnp.score"), (B, M))
    weights = ad.softmax(scores, 1)
    weighted = ad.mul(features, ad.expand(ad.reshape(weights, (B, M, 1)), (B, M, C)))
    pooled = ad.maxpool(mlp(weighted, state, "wnp.point"), 1)
    normal = ad.normalize(mlp(pooled, state, "wnp.head"), axis=-1, eps=1e-12)
    return normal, weights


# ----------------------------------------------------------------- full model


@dataclass
class Neighborhoods:
    """Precomputed coordinate-space neighbor lists for a batch of patches."""

    lfe: tuple
    hier: tuple
    pff: np.ndarray

    def take(self, sel):
        return Neighborhoods(tuple(a[sel] for a in self.lfe), tuple(a[sel] for a in self.hier), self.pff[sel])


def neighborhoods(points, cfg):
    """Neighbor lists for LFE (full patch), every hierarchy stage (kept prefix) and PFF."""
    sizes = cfg.stage_sizes
    lfe = tuple(_kernels.knn(points, points, s) for s in cfg.lfe_scales)
    hier = []
    for h, s in enumerate(cfg.hier_scales):
        p = np.ascontiguousarray(points[:, : sizes[h + 1]])
        hier.append(_kernels.knn(p, p, s))
    p = np.ascontiguousarray(points[:, : sizes[-1]])
    pff = _kernels.knn(p, p, cfg.pff_neighbors)
    return Neighborhoods(lfe, tuple(hier), pff)


def _feature_knn(features, k):
    with ad.no_grad():
        data = np.ascontiguousarray(features.data)
    return _kernels.knn(data, data, k)


def forward(state, points, nbrs):
    """Run the network on ``(B, N, 3)`` aligned patches.

    Returns the unit normal in the input (PCA-aligned) frame ``(B, 3)``, the
    WNP point weights ``(B, M)`` and the QSTN rotation ``(B, 3, 3)``.
    Points are rotated as row vectors, ``p @ R``.
    """
    cfg = state.config
    pts = points if isinstance(points, Tensor) else Tensor(points)
    B, N, _ = pts.shape
    if N != cfg.patch_size:
        raise StructuralError(f"patch has {N} points, config expects {cfg.patch_size}")
    R = qstn_forward(pts, state)
    p = ad.matmul(pts, R)
    scales = []
    for s, idx in zip((1, 2), nbrs.lfe):
        f = p
        for layer in range(cfg.lfe_depth):
            if layer > 0 and cfg.knn_space == "features":
                idx = _feature_knn(f, idx.shape[2])
            f = lfe_forward(f, idx, state, f"lfe{s}.{layer}")
        scales.append(f)
    f = aff_forward(scales[0], scales[1], state)
    prev = None
    for h, idx in enumerate(nbrs.hier, start=1):
        f, prev = hier_fuse_forward(f, _rows(p, f.shape[1]), idx, state, h, prev)
    M = f.shape[1]
    F = pff_forward(f, _rows(p, M), nbrs.pff, state)
    n_rot, weights = wnp_forward(F, state)
    n_local = ad.reshape(ad.matmul(ad.reshape(n_rot, (B, 1, 3)), ad.transpose(R, (0, 2, 1))), (B, 3))
    return n_local, weights, R
