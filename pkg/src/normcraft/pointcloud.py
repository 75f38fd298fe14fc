"""Point clouds, PCPNet-style text I/O, exact neighbor search and patch extraction."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParseError, StructuralError

TIE_BREAK = "ascending-index"


@dataclass
class PointCloud:
    points: np.ndarray
    normals: np.ndarray = None
    name: str = "cloud"

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise StructuralError(f"{self.name}: non-finite coordinate")
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != len(self.points):
                raise StructuralError(f"{self.name}: {len(n)} normals for {len(self.points)} points")
            self.normals = normalize_rows(n, what=f"{self.name} normals")

    def __len__(self):
        return len(self.points)

    @property
    def diagonal(self):
        if len(self.points) == 0:
            return 0.0
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))


def normalize_rows(v, what="vectors"):
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise StructuralError(f"{what}: zero-length or non-finite vector")
    # rows already unit to rounding are kept bit-for-bit
    return np.where(np.abs(norms - 1.0) > 4e-16, v / norms, v)


# --------------------------------------------------------------------- file I/O


def _read_table(path, widths):
    rows = []
    with open(path, "r", encoding="ascii", newline=None) as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) not in widths:
                raise ParseError(path, line_no, f"expected {' or '.join(map(str, widths))} values, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ParseError(path, line_no, f"not a decimal number in {line.strip()!r}") from None
            if not all(np.isfinite(vals)):
                raise ParseError(path, line_no, "non-finite value")
            rows.append(vals)
    if not rows:
        return np.zeros((0, max(widths)))
    if len({len(r) for r in rows}) != 1:
        raise ParseError(path, len(rows), "inconsistent column count")
    return np.array(rows, dtype=np.float64)


def sibling(path, suffix):
    path = Path(path)
    return path.with_suffix(suffix)


def load_cloud(path, format="xyz"):
    """Read ``<name>.xyz`` (plus ``<name>.normals`` when present) or a 6-column ``xyz+normals`` file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format == "xyz+normals":
        table = _read_table(path, (6,))
        return PointCloud(table[:, :3], table[:, 3:], name=path.stem)
    if format != "xyz":
        raise StructuralError(f"unknown cloud format {format!r}")
    points = _read_table(path, (3,))
    normals = None
    npath = sibling(path, ".normals")
    if npath.exists():
        normals = load_normals(npath)
        if len(normals) != len(points):
            raise StructuralError(f"{npath}: {len(normals)} normals for {len(points)} points")
    return PointCloud(points, normals, name=path.stem)


def load_normals(path):
    return normalize_rows(_read_table(path, (3,)), what=str(path))


def load_pidx(path):
    """Evaluation subset indices, one integer per line."""
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                out.append(int(s))
            except ValueError:
                raise ParseError(path, line_no, f"not an integer: {s!r}") from None
    return np.array(out, dtype=np.int64)


def _write_rows(path, arr):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for row in arr:
            fh.write(" ".join(f"{v:.17g}" for v in row))
            fh.write("\n")


def save_normals(path, normals):
    _write_rows(path, np.asarray(normals, dtype=np.float64).reshape(-1, 3))


def save_pidx(path, indices):
    Path(path).write_text("".join(f"{int(i)}\n" for i in indices), encoding="ascii")


def save_cloud(cloud, path):
    """Write ``<path>`` (.xyz) and, when the cloud has normals, the sibling ``.normals``.

    17 significant digits make the decimal round trip exact.
    """
    path = Path(path)
    _write_rows(path, cloud.points)
    if cloud.normals is not None:
        save_normals(sibling(path, ".normals"), cloud.normals)


# ------------------------------------------------------------------- neighbors


def _sq_dist(points, q):
    d = points - q
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


class NeighborIndex:
    """Exact k-NN over one cloud; equal distances resolve to the lower point index.

    A kd-tree proposes candidates, which are re-ranked by exactly computed
    squared distances; rows whose k-th distance is not clearly separated from
    the next candidate are re-queried with a radius search.
    """

    _SLACK = 8

    def __init__(self, points):
        pts = np.array(getattr(points, "points", points), dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise StructuralError("cannot index an empty cloud")
        pts.setflags(write=False)
        self._points = pts
        self._tree = cKDTree(pts)
        self.tie_break = TIE_BREAK

    @property
    def points(self):
        return self._points

    def __len__(self):
        return len(self._points)

    def query(self, q, k):
        """``(indices, squared_distances)`` of shape ``(m, k)`` for ``m`` query positions."""
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        n = len(self._points)
        if not 1 <= k <= n:
            raise StructuralError(f"k={k} outside [1, {n}]")
        kk = min(n, k + self._SLACK)
        _, cand = self._tree.query(q, k=kk)
        cand = np.asarray(cand, dtype=np.int64).reshape(len(q), kk)
        idx, d2 = self._rank(q, cand, k)
        if kk < n:
            full_d2 = np.sort(_sq_dist(self._points[cand], q[:, None, :]), axis=1)
            unsure = ~(full_d2[:, -1] > d2[:, -1] * (1.0 + 1e-9))
            for r in np.flatnonzero(unsure):
                radius = np.sqrt(d2[r, -1]) * (1.0 + 1e-7) + 1e-12
                ball = np.array(sorted(self._tree.query_ball_point(q[r], radius)), dtype=np.int64)
                ri, rd = self._rank(q[r : r + 1], ball[None, :], k)
                idx[r], d2[r] = ri[0], rd[0]
        return idx, d2

    def _rank(self, q, cand, k):
        d2 = _sq_dist(self._points[cand], q[:, None, :])
        order = np.lexsort((cand, d2), axis=-1)[:, :k]
        return np.take_along_axis(cand, order, axis=1), np.take_along_axis(d2, order, axis=1)


def build_index(cloud):
    return NeighborIndex(cloud)


def nearest_point(index, q):
    """Index of, and Euclidean distance to, the closest indexed point."""
    idx, d2 = index.query(np.asarray(q, dtype=np.float64).reshape(1, 3), 1)
    return int(idx[0, 0]), float(np.sqrt(d2[0, 0]))


def nearest_points(index, qs):
    idx, d2 = index.query(qs, 1)
    return idx[:, 0], np.sqrt(d2[:, 0])


# --------------------------------------------------------------------- patches


@dataclass
class Patch:
    query_index: int
    points: np.ndarray
    rotation: np.ndarray
    scale: float
    source_indices: np.ndarray

    def to_world(self, v):
        """Map aligned-frame direction(s) back to the cloud frame."""
        return np.asarray(v, dtype=np.float64) @ self.rotation

    def to_local(self, v):
        return np.asarray(v, dtype=np.float64) @ self.rotation.T


def _sign_by_largest(v):
    # v: (m, 3); flip so the largest-magnitude component (first on ties) is positive
    pick = np.take_along_axis(v, np.argmax(np.abs(v), axis=1)[:, None], axis=1)[:, 0]
    return np.where(pick < 0, -1.0, 1.0)


def alignment_rotations(local, hint=None):
    """Rotations whose last row is the smallest-variance axis of each ``(m, N, 3)`` patch.

    The normal axis is signed towards ``hint`` when given (falling back to the
    largest-component rule where the hint is perpendicular); the first axis is
    signed by the third moment of the projected points so the frame follows
    rigid motions of the input.
    """
    m = local.shape[0]
    centered = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("mni,mnj->mij", centered, centered) / local.shape[1]
    _, vecs = np.linalg.eigh(cov)
    e3 = vecs[:, :, 0]
    e1 = vecs[:, :, 2]
    s3 = _sign_by_largest(e3)
    if hint is not None:
        dots = np.einsum("mi,mi->m", np.asarray(hint, dtype=np.float64).reshape(m, 3), e3)
        s3 = np.where(dots > 0, 1.0, np.where(dots < 0, -1.0, s3))
    e3 = e3 * s3[:, None]
    skew = np.einsum("mn->m", np.einsum("mni,mi->mn", centered, e1) ** 3)
    spread = np.einsum("mn->m", np.abs(np.einsum("mni,mi->mn", centered, e1)) ** 3)
    s1 = np.where(np.abs(skew) > 1e-9 * spread, np.sign(skew), _sign_by_largest(e1))
    e1 = e1 * s1[:, None]
    e2 = np.cross(e3, e1)
    return np.stack([e1, e2, e3], axis=1)


def extract_patches(cloud, index, queries, N):
    """Vectorized :func:`extract_patch` over many query indices."""
    queries = np.asarray(queries, dtype=np.int64).reshape(-1)
    n = len(cloud)
    if N < 1 or N > n:
        raise StructuralError(f"patch size {N} outside [1, {n}]")
    if len(queries) and (queries.min() < 0 or queries.max() >= n):
        raise StructuralError("query index out of range")
    pts = cloud.points
    idx, d2 = index.query(pts[queries], N)
    # the query itself is placed first even if a coincident point has a lower index
    for r in np.flatnonzero(idx[:, 0] != queries):
        row = idx[r]
        pos = np.flatnonzero(row == queries[r])
        if len(pos):
            row[1 : pos[0] + 1] = row[: pos[0]].copy()
        else:
            row[1:] = row[:-1].copy()
        row[0] = queries[r]
    local = pts[idx] - pts[queries][:, None, :]
    radius = np.sqrt(np.max(_sq_dist(local, 0.0), axis=1))
    scale = np.where(radius > 0, radius, 1.0)
    local = local / scale[:, None, None]
    if N >= 2:
        hint = cloud.normals[queries] if cloud.normals is not None else None
        rot = alignment_rotations(local, hint)
    else:
        rot = np.broadcast_to(np.eye(3), (len(queries), 3, 3)).copy()
    aligned = np.einsum("mnj,mij->mni", local, rot)
    aligned[:, 0, :] = 0.0
    return [
        Patch(int(q), aligned[i], rot[i], float(scale[i]), idx[i].copy())
        for i, q in enumerate(queries)
    ]


def extract_patch(cloud, index, query, N):
    """Centered, unit-radius, PCA-aligned neighborhood of ``N`` points around ``query``.

    Points are ordered by ascending distance to the query (the query first).
    """
    return extract_patches(cloud, index, [query], N)[0]
