"""Training patches: aligned coordinates, frame-local labels and neighbor lists."""

from dataclasses import dataclass

import numpy as np

from ..errors import StructuralError
from ..metrics import cnd_relabel
from ..pointcloud import NeighborIndex, extract_patches
from .model import Neighborhoods, neighborhoods


@dataclass
class PatchSet:
    points: np.ndarray
    labels: np.ndarray
    nbrs: Neighborhoods

    def __len__(self):
        return len(self.points)

    def take(self, sel):
        return PatchSet(self.points[sel], self.labels[sel], self.nbrs.take(sel))


def patch_arrays(patches):
    return np.ascontiguousarray(np.stack([p.points for p in patches]))


def make_patch_set(patches, world_labels, cfg):
    """Bundle extracted patches with their world-frame labels (rotated into each patch frame)."""
    pts = patch_arrays(patches)
    rot = np.stack([p.rotation for p in patches])
    local = np.einsum("bij,bj->bi", rot, np.asarray(world_labels, dtype=np.float64))
    return PatchSet(pts, local, neighborhoods(pts, cfg))


def sample_training_set(pairs, cfg, n_patches, labels="cnd", seed=0):
    """Draw ``n_patches`` query points round-robin over ``(noisy, clean)`` cloud pairs.

    ``labels="cnd"`` takes the nearest clean normal; ``"annotated"`` the
    noisy cloud's own (pre-noise) normals.
    """
    if not pairs:
        raise StructuralError("no training clouds")
    rng = np.random.default_rng(seed)
    owner = np.arange(n_patches) % len(pairs)
    patches, targets = [], []
    for i, (noisy, clean) in enumerate(pairs):
        count = int(np.sum(owner == i))
        if count == 0:
            continue
        queries = rng.choice(len(noisy), size=count, replace=count > len(noisy))
        if labels == "cnd":
            world = cnd_relabel(noisy, clean)
        elif labels == "annotated":
            if noisy.normals is None:
                raise StructuralError(f"{noisy.name}: annotated labels need normals on the noisy cloud")
            world = noisy.normals
        else:
            raise StructuralError(f"unknown label kind {labels!r}")
        patches.extend(extract_patches(noisy, NeighborIndex(noisy), queries, cfg.patch_size))
        targets.append(world[queries])
    return make_patch_set(patches, np.concatenate(targets), cfg)
