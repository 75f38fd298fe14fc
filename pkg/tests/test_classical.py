import numpy as np
import pytest

from conftest import random_rotation
from normcraft.bench import BenchSpec, gen_shape
from normcraft.classical import estimate_normals, fit_jet, fit_plane_pca, monomial_exponents
from normcraft.errors import DegenerateGeometryError, StructuralError
from normcraft.metrics import angular_errors
from normcraft.pointcloud import NeighborIndex, PointCloud, extract_patch


def plane_cloud(rng, n=400, rot=None):
    pts = np.column_stack([rng.uniform(-1, 1, (n, 2)), np.zeros(n)])
    nrm = np.tile([0, 0, 1.0], (n, 1))
    if rot is not None:
        pts, nrm = pts @ rot.T, nrm @ rot.T
    return PointCloud(pts, nrm)


def test_monomials_put_linear_terms_first():
    assert monomial_exponents(2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


def test_pca_exact_plane(rng):
    rot = random_rotation(rng)
    cloud = plane_cloud(rng, rot=rot)
    est = estimate_normals(cloud, "pca", k=32)
    assert angular_errors(cloud.normals, est).max() < 1e-6


def test_jet_on_paraboloid_is_exact_at_origin(rng):
    xy = rng.uniform(-0.3, 0.3, (80, 2))
    pts = np.vstack([[0, 0, 0], np.column_stack([xy, xy[:, 0] ** 2 + xy[:, 1] ** 2])])
    cloud = PointCloud(pts)
    patch = extract_patch(cloud, NeighborIndex(cloud), 0, 60)
    n = fit_jet(patch, order=2)
    assert angular_errors([[0, 0, 1.0]], [n])[0] < 1e-9


def test_order1_jet_matches_pca_on_planes(rng):
    rot = random_rotation(rng)
    cloud = plane_cloud(rng, rot=rot)
    pca = estimate_normals(cloud, "pca", k=24, queries=np.arange(20))
    jet = estimate_normals(cloud, "jet", k=24, order=1, queries=np.arange(20))
    assert angular_errors(pca, jet).max() < 1e-6


def test_weighted_jet(rng):
    cloud = plane_cloud(rng)
    est = estimate_normals(cloud, "jet", k=40, order=2, weighted=True, queries=[0, 1, 2])
    assert angular_errors(cloud.normals[:3], est).max() < 1e-6


def test_degenerate_inputs(rng):
    line = PointCloud(np.column_stack([np.linspace(0, 1, 20), np.zeros(20), np.zeros(20)]))
    patch = extract_patch(line, NeighborIndex(line), 0, 10)
    with pytest.raises(DegenerateGeometryError):
        fit_plane_pca(patch)
    with pytest.raises(DegenerateGeometryError):
        fit_jet(patch, order=2)
    tiny = PointCloud(rng.normal(size=(5, 3)))
    with pytest.raises(DegenerateGeometryError):
        fit_jet(extract_patch(tiny, NeighborIndex(tiny), 0, 5), order=2)
    with pytest.raises(StructuralError):
        estimate_normals(tiny, "svm")


def test_noisy_sphere_is_reasonable():
    clean, noisy = gen_shape(BenchSpec("sphere", 2000, 0.005, seed=3))
    est = estimate_normals(noisy, "pca", k=64, queries=np.arange(0, 2000, 20))
    err = angular_errors(clean.normals[::20], est)
    assert np.sqrt(np.mean(err**2)) < 5.0


def test_jobs_do_not_change_results(rng):
    cloud = plane_cloud(rng, n=3000, rot=random_rotation(rng))
    a = estimate_normals(cloud, "pca", k=16, jobs=1)
    b = estimate_normals(cloud, "pca", k=16, jobs=3)
    assert np.array_equal(a, b)
