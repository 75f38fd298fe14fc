import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_cloud, random_rotation
from normcraft.errors import ParseError, StructuralError
from normcraft.pointcloud import (
    NeighborIndex,
    PointCloud,
    alignment_rotations,
    extract_patch,
    extract_patches,
    load_cloud,
    load_pidx,
    nearest_point,
    save_cloud,
    save_pidx,
)


def test_round_trip_is_bit_exact(tmp_path, rng):
    cloud = random_cloud(rng, 50)
    save_cloud(cloud, tmp_path / "a.xyz")
    back = load_cloud(tmp_path / "a.xyz")
    assert np.array_equal(back.points, cloud.points)
    assert np.array_equal(back.normals, cloud.normals)
    assert back.name == "a"


def test_six_column_format(tmp_path):
    (tmp_path / "b.txt").write_text("0 0 0 0 0 2\n1 0 0 0 3 0\n")
    c = load_cloud(tmp_path / "b.txt", format="xyz+normals")
    assert np.allclose(c.normals, [[0, 0, 1], [0, 1, 0]])


def test_parse_error_names_line(tmp_path):
    p = tmp_path / "bad.xyz"
    p.write_text("0 0 0\n1 2 x\n")
    with pytest.raises(ParseError) as exc:
        load_cloud(p)
    assert exc.value.line_no == 2 and "bad.xyz:2" in str(exc.value)


def test_wrong_column_count(tmp_path):
    p = tmp_path / "bad.xyz"
    p.write_text("0 0 0\n1 2\n")
    with pytest.raises(ParseError):
        load_cloud(p)


def test_normal_count_mismatch(tmp_path):
    (tmp_path / "c.xyz").write_text("0 0 0\n1 1 1\n")
    (tmp_path / "c.normals").write_text("0 0 1\n")
    with pytest.raises(StructuralError):
        load_cloud(tmp_path / "c.xyz")


def test_zero_normal_rejected():
    with pytest.raises(StructuralError):
        PointCloud(np.zeros((2, 3)), np.array([[0, 0, 1.0], [0, 0, 0]]))


def test_pidx_round_trip(tmp_path):
    save_pidx(tmp_path / "a.pidx", [3, 1, 4])
    assert load_pidx(tmp_path / "a.pidx").tolist() == [3, 1, 4]


def brute(points, q, k):
    d = [(float(np.sum((p - q) ** 2)), i) for i, p in enumerate(points)]
    return [i for _, i in sorted(d)[:k]]


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 80), st.integers(1, 5), st.integers(0, 2**31 - 1), st.booleans())
def test_knn_exact_with_ties(n, k, seed, grid):
    r = np.random.default_rng(seed)
    pts = r.uniform(-1, 1, size=(n, 3))
    if grid:
        pts = np.round(pts * 2) / 2  # many duplicate and equidistant points
    index = NeighborIndex(pts)
    qs = r.uniform(-1, 1, size=(4, 3))
    if grid:
        qs = np.round(qs * 2) / 2
    k = min(k, n)
    idx, d2 = index.query(qs, k)
    for row, q in zip(idx, qs):
        assert row.tolist() == brute(pts, q, k)
    assert np.all(np.diff(d2, axis=1) >= 0)


def test_nearest_point():
    index = NeighborIndex(np.array([[0, 0, 0], [1, 0, 0], [1, 0, 0.0]]))
    assert nearest_point(index, [0.9, 0, 0]) == (1, pytest.approx(0.1))


def test_patch_invariants(rng):
    cloud = random_cloud(rng, 300, with_normals=False)
    index = NeighborIndex(cloud)
    patch = extract_patch(cloud, index, 17, 40)
    assert patch.points.shape == (40, 3)
    assert patch.source_indices[0] == 17
    assert np.allclose(patch.points[0], 0.0)
    radii = np.linalg.norm(patch.points, axis=1)
    assert radii.max() == pytest.approx(1.0)
    assert np.all(np.diff(radii) >= -1e-12)
    R = patch.rotation
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12) and np.linalg.det(R) == pytest.approx(1.0)
    v = rng.normal(size=(5, 3))
    assert np.allclose(patch.to_world(patch.to_local(v)), v)


def test_alignment_follows_rigid_motion(rng):
    local = rng.normal(size=(1, 60, 3)) * [1.0, 0.5, 0.05]
    local[0] += rng.normal(size=(60, 3)) ** 2 * [0.2, 0, 0]  # skewed along the main axis
    rot = random_rotation(rng)
    a = alignment_rotations(local)[0]
    b = alignment_rotations(local @ rot.T)[0]
    assert np.allclose(local[0] @ a.T, (local[0] @ rot.T) @ b.T, atol=1e-9)


def test_patch_size_one_and_errors(rng):
    cloud = random_cloud(rng, 10)
    index = NeighborIndex(cloud)
    p = extract_patch(cloud, index, 3, 1)
    assert np.array_equal(p.rotation, np.eye(3))
    with pytest.raises(StructuralError):
        extract_patches(cloud, index, [0], 11)
    with pytest.raises(StructuralError):
        extract_patches(cloud, index, [10], 5)


def test_hint_signs_normal_axis(rng):
    pts = np.column_stack([rng.uniform(-1, 1, (100, 2)), np.zeros(100)])
    cloud = PointCloud(pts, np.tile([0, 0, -1.0], (100, 1)))
    p = extract_patch(cloud, NeighborIndex(cloud), 0, 30)
    assert np.allclose(p.rotation[2], [0, 0, -1])
