"""Inference over whole clouds."""

import numpy as np

from .. import autodiff as ad
from ..parallel import map_chunks
from ..pointcloud import NeighborIndex, extract_patches
from .data import patch_arrays
from .model import forward, neighborhoods


def predict_patches(state, patches, batch=64):
    """Unit normals in the cloud frame for a list of patches."""
    out = []
    with ad.no_grad():
        for i in range(0, len(patches), batch):
            chunk = patches[i : i + batch]
            pts = patch_arrays(chunk)
            local, _, _ = forward(state, pts, neighborhoods(pts, state.config))
            rot = np.stack([p.rotation for p in chunk])
            out.append(np.einsum("bi,bij->bj", local.data, rot))
    return np.concatenate(out) if out else np.zeros((0, 3))


def predict_normals(cloud, state, queries=None, jobs=None, index=None):
    """Network normals for ``queries`` (default all points).

    Outputs are flipped into the hemisphere of the cloud's annotated normals
    when it has them.
    """
    index = NeighborIndex(cloud) if index is None else index
    queries = np.arange(len(cloud)) if queries is None else np.asarray(queries, dtype=np.int64)
    N = state.config.patch_size

    def run(chunk):
        return predict_patches(state, extract_patches(cloud, index, chunk, N)).reshape(-1, 3)

    normals = map_chunks(run, queries, jobs, chunk=256)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    if cloud.normals is not None:
        flip = np.einsum("ij,ij->i", normals, cloud.normals[queries]) < 0
        normals[flip] *= -1.0
    return normals
