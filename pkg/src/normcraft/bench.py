"""Synthetic analytic shapes with PCPNet-style corruptions."""

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError
from .pointcloud import PointCloud

SHAPES = ("plane", "sphere", "cylinder", "cube")
DENSITY_MODES = ("uniform", "stripes", "gradient")


@dataclass(frozen=True)
class BenchSpec:
    shape: str = "sphere"
    n_points: int = 10000
    noise_sigma: float = 0.0
    density_mode: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise StructuralError(f"unknown shape {self.shape!r}; choose from {', '.join(SHAPES)}")
        if self.density_mode not in DENSITY_MODES:
            raise StructuralError(f"unknown density mode {self.density_mode!r}")
        if self.n_points < 8:
            raise StructuralError("n_points must be at least 8")
        if not self.noise_sigma >= 0:
            raise StructuralError("noise_sigma must be non-negative")


def _plane(rng, m):
    xy = rng.uniform(-1.0, 1.0, size=(m, 2))
    pts = np.column_stack([xy, np.zeros(m)])
    return pts, np.tile([0.0, 0.0, 1.0], (m, 1))


def _sphere(rng, m):
    g = rng.standard_normal((m, 3))
    pts = g / np.linalg.norm(g, axis=1, keepdims=True)
    return pts, pts / np.linalg.norm(pts, axis=1, keepdims=True)


def _cylinder(rng, m):
    theta = rng.uniform(0.0, 2.0 * np.pi, size=m)
    z = rng.uniform(-1.0, 1.0, size=m)
    c, s = np.cos(theta), np.sin(theta)
    return np.column_stack([c, s, z]), np.column_stack([c, s, np.zeros(m)])


CUBE_FACE_NORMALS = np.array(
    [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], dtype=np.float64
)


def cube_normals(pts):
    """Normal of the face nearest each point of the cube ``[-0.5, 0.5]^3`` (lowest face index on ties)."""
    dist = np.abs(np.repeat(pts, 2, axis=1) - np.tile([-0.5, 0.5], 3))
    return CUBE_FACE_NORMALS[np.argmin(dist, axis=1)]


def _cube(rng, m):
    face = rng.integers(0, 6, size=m)
    uv = rng.uniform(-0.5, 0.5, size=(m, 2))
    axis = face // 2
    pts = np.empty((m, 3))
    for a in range(3):
        rest = [b for b in range(3) if b != a]
        sel = axis == a
        pts[sel, a] = np.where(face[sel] % 2 == 0, -0.5, 0.5)
        pts[np.ix_(sel, rest)] = uv[sel]
    return pts, cube_normals(pts)


_SAMPLERS = {"plane": _plane, "sphere": _sphere, "cylinder": _cylinder, "cube": _cube}
_NOMINAL_DIAGONAL = {"plane": 2.0 * np.sqrt(2.0), "sphere": 2.0 * np.sqrt(3.0), "cylinder": 2.0 * np.sqrt(3.0), "cube": np.sqrt(3.0)}
_X_RANGE = {"plane": (-1.0, 1.0), "sphere": (-1.0, 1.0), "cylinder": (-1.0, 1.0), "cube": (-0.5, 0.5)}


def _keep_mask(spec, rng, x):
    lo, hi = _X_RANGE[spec.shape]
    if spec.density_mode == "stripes":
        band = _NOMINAL_DIAGONAL[spec.shape] / 20.0
        return np.floor((x - lo) / band).astype(np.int64) % 2 == 0
    if spec.density_mode == "gradient":
        keep_p = 1.0 - 0.9 * (x - lo) / (hi - lo)
        return rng.uniform(size=len(x)) < keep_p
    return np.ones(len(x), dtype=bool)


def gen_shape(spec):
    """Clean cloud with analytic normals and its noisy copy carrying the same (annotated) normals.

    Noise is isotropic Gaussian with standard deviation ``noise_sigma`` times
    the clean cloud's bounding-box diagonal.
    """
    rng = np.random.default_rng(spec.seed)
    sample = _SAMPLERS[spec.shape]
    pts_parts, nrm_parts, have = [], [], 0
    while have < spec.n_points:
        p, n = sample(rng, 2 * spec.n_points)
        keep = _keep_mask(spec, rng, p[:, 0])
        pts_parts.append(p[keep])
        nrm_parts.append(n[keep])
        have += int(keep.sum())
    pts = np.concatenate(pts_parts)[: spec.n_points]
    nrm = np.concatenate(nrm_parts)[: spec.n_points]
    tag = f"{spec.shape}"
    clean = PointCloud(pts, nrm, name=f"{tag}_clean")
    if spec.noise_sigma == 0:
        noisy_pts = pts.copy()
    else:
        sigma = spec.noise_sigma * clean.diagonal
        noisy_pts = pts + rng.normal(0.0, sigma, size=pts.shape)
    noisy = PointCloud(noisy_pts, nrm.copy(), name=f"{tag}_noisy")
    return clean, noisy
