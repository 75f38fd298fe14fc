"""PCA plane fitting and n-jet height-field fitting on aligned patches."""

from math import comb

import numpy as np
import scipy.linalg

from .errors import DegenerateGeometryError, StructuralError
from .parallel import map_chunks
from .pointcloud import NeighborIndex, extract_patches

RANK_TOL = 1e-10


def fit_plane_pca(patch):
    """Unit normal (cloud frame) of the least-squares plane through the patch."""
    pts = patch.points
    if len(pts) < 3:
        raise DegenerateGeometryError(f"PCA needs at least 3 points, patch has {len(pts)}")
    centered = pts - pts.mean(axis=0)
    vals, vecs = np.linalg.eigh(centered.T @ centered / len(pts))
    if vals[2] <= 0 or vals[1] <= 1e-12 * vals[2]:
        raise DegenerateGeometryError("patch points are collinear or coincident")
    n = vecs[:, 0]
    # the alignment already signed the normal axis; keep that hemisphere
    if n[2] < 0:
        n = -n
    return patch.to_world(n)


def monomial_exponents(order):
    return [(j, d - j) for d in range(order + 1) for j in range(d, -1, -1)]


def gaussian_weights(points, radius=1.0):
    h = radius / 3.0
    return np.exp(-np.sum(points * points, axis=1) / (h * h))


def _frame_towards(n):
    """Rotation (rows = axes) whose third axis is the unit vector ``n``, first axis nearest x."""
    e1 = np.array([1.0, 0.0, 0.0]) - n[0] * n
    if np.linalg.norm(e1) < 1e-6:
        e1 = np.array([0.0, 1.0, 0.0]) - n[1] * n
    e1 /= np.linalg.norm(e1)
    return np.stack([e1, np.cross(n, e1), n])


def _jet_gradient(pts, order, w):
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    A = np.stack([x**j * y**k for j, k in monomial_exponents(order)], axis=1)
    if w is not None:
        A, z = A * w[:, None], z * w
    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0 or np.any(diag < RANK_TOL * diag[0]):
        raise DegenerateGeometryError(f"order-{order} jet system is rank deficient")
    coef = np.empty(A.shape[1])
    coef[piv] = scipy.linalg.solve_triangular(R, Q.T @ z)
    # coefficients 1 and 2 are the x and y terms
    n = np.array([-coef[1], -coef[2], 1.0])
    return n / np.linalg.norm(n)


def fit_jet(patch, order=3, weights=None, refine=True, max_iter=24):
    """Normal at the query from a least-squares polynomial height field ``z = f(x, y)``.

    Solved in the patch's aligned frame with a column-pivoted QR; ``weights``
    (one per point) turns it into weighted least squares, and ``"gaussian"``
    selects ``exp(-|p|^2 / h^2)`` with ``h`` a third of the patch radius.

    A polynomial height field is only exact when the frame's z axis is the
    surface normal, so with ``refine`` the frame is re-aligned to the fitted
    normal and the fit repeated until the normal stops moving.
    """
    if not 1 <= order <= 4:
        raise StructuralError(f"jet order must be in 1..4, got {order}")
    pts = patch.points
    ncoef = comb(order + 2, 2)
    if len(pts) < ncoef:
        raise DegenerateGeometryError(f"order-{order} jet needs {ncoef} points, patch has {len(pts)}")
    if isinstance(weights, str) and weights == "gaussian":
        weights = gaussian_weights(pts)
    w = None
    if weights is not None:
        w = np.sqrt(np.asarray(weights, dtype=np.float64).reshape(-1))
        if len(w) != len(pts):
            raise StructuralError(f"{len(w)} weights for {len(pts)} points")
    frame = np.eye(3)
    n = _jet_gradient(pts, order, w)
    for _ in range(max_iter if refine and order > 1 else 0):
        # the tilt, not 1 - n_z, which rounds to 0 while the tilt is still ~1e-8
        if np.hypot(n[0], n[1]) < 1e-15:
            break
        frame = _frame_towards(n @ frame)
        n = _jet_gradient(pts @ frame.T, order, w)
    return patch.to_world(n @ frame)


def estimate_normals(cloud, method="pca", k=256, order=3, weighted=False, queries=None, jobs=None, index=None):
    """Classical normals for ``queries`` (default: every point) of ``cloud``."""
    if method not in ("pca", "jet"):
        raise StructuralError(f"unknown classical method {method!r}")
    index = NeighborIndex(cloud) if index is None else index
    k = min(int(k), len(cloud))
    queries = np.arange(len(cloud)) if queries is None else np.asarray(queries, dtype=np.int64)

    def run(chunk):
        patches = extract_patches(cloud, index, chunk, k)
        if method == "pca":
            return np.array([fit_plane_pca(p) for p in patches]).reshape(-1, 3)
        w = "gaussian" if weighted else None
        return np.array([fit_jet(p, order, w) for p in patches]).reshape(-1, 3)

    return map_chunks(run, queries, jobs)
