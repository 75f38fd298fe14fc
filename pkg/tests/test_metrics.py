import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_cloud, random_unit
from normcraft.errors import StructuralError
from normcraft.metrics import (
    AngularErrorSet,
    angular_error,
    angular_errors,
    chamfer_distance,
    cnd,
    cnd_relabel,
    evaluate,
    msae,
    pgp_auc,
    pgp_curve,
    rmse_angle,
)
from normcraft.pointcloud import PointCloud


def loop_angle(a, b):
    c = abs(sum(x * y for x, y in zip(a, b))) / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))
    return math.degrees(math.acos(min(1.0, c)))


def loop_nearest(points, q):
    best, bi = None, -1
    for i, p in enumerate(points):
        d = sum((x - y) ** 2 for x, y in zip(p, q))
        if best is None or d < best:
            best, bi = d, i
    return bi, best


def test_angular_error_basics():
    assert angular_error([0, 0, 1], [0, 0, -1]) == 0.0
    assert angular_error([0, 0, 1], [0, 0, -1], oriented=True) == pytest.approx(180.0)
    assert angular_error([0, 0, 1], [1, 0, 0]) == pytest.approx(90.0)
    assert angular_error([0, 0, 1], [0, 1, 1]) == pytest.approx(45.0)
    with pytest.raises(StructuralError):
        angular_errors(np.zeros((1, 3)), np.ones((1, 3)))


def test_rmse_matches_loop(rng):
    e = rng.uniform(0, 90, 50)
    assert rmse_angle(e) == pytest.approx(math.sqrt(sum(x * x for x in e) / len(e)), rel=1e-14)


def test_chamfer_matches_double_loop(rng):
    a = rng.normal(size=(60, 3))
    b = rng.normal(size=(45, 3))
    want = sum(loop_nearest(b, p)[1] for p in a) / len(a) + sum(loop_nearest(a, p)[1] for p in b) / len(b)
    assert chamfer_distance(a, b) == pytest.approx(want, rel=1e-12)
    assert chamfer_distance(a, a) == 0.0


def test_cnd_relabel_and_cnd_match_loop(rng):
    clean = random_cloud(rng, 80)
    noisy = PointCloud(clean.points + rng.normal(scale=0.05, size=(80, 3)))
    labels = cnd_relabel(noisy, clean)
    for p, lab in zip(noisy.points, labels):
        i, _ = loop_nearest(clean.points, p)
        assert np.array_equal(lab, clean.normals[i])
    pred = random_unit(rng, 80)
    want = math.sqrt(sum(loop_angle(l, p) ** 2 for l, p in zip(labels, pred)) / 80)
    assert cnd(noisy, clean, pred) == pytest.approx(want, rel=1e-12)


def test_msae_matches_loop(rng):
    clean = random_cloud(rng, 60)
    noisy = PointCloud(clean.points + rng.normal(scale=0.05, size=(60, 3)))
    pred = random_unit(rng, 60)
    errs = []
    for p, n in zip(noisy.points, pred):
        order = sorted(range(60), key=lambda j: (sum((x - y) ** 2 for x, y in zip(p, clean.points[j])), j))[:4]
        errs.append(min(loop_angle(clean.normals[j], n) for j in order))
    want = math.sqrt(sum(e * e for e in errs) / len(errs))
    assert msae(noisy, clean, pred, k=4) == pytest.approx(want, rel=1e-12)
    # k=1 is CND
    assert msae(noisy, clean, pred, k=1) == pytest.approx(cnd(noisy, clean, pred), rel=1e-14)
    assert msae(noisy, clean, pred, k=4) <= cnd(noisy, clean, pred)


def test_pgp_zero_errors_give_unit_auc():
    rep = pgp_auc(np.zeros(10))
    assert rep.auc == 1.0
    assert all(f == 1.0 for _, f in rep.pgp)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 90), min_size=1, max_size=60))
def test_pgp_monotone_and_auc_oracle(errors):
    e = np.array(errors)
    curve = pgp_curve(e)
    assert np.all(np.diff(curve) >= 0)
    t = np.arange(0.0, 91.0)
    frac = [np.mean(e == 0) if x == 0 else np.mean(e < x) for x in t]
    area = sum((t[i + 1] - t[i]) * (frac[i] + frac[i + 1]) / 2 for i in range(len(t) - 1)) / 90.0
    assert abs(pgp_auc(AngularErrorSet(e)).auc - area) < 1e-12


def test_thresholds_must_ascend():
    with pytest.raises(StructuralError):
        AngularErrorSet(np.zeros(3), thresholds=[0, 5, 5])


def test_evaluate_report(rng):
    clean = random_cloud(rng, 100)
    noisy = PointCloud(clean.points, clean.normals)
    rep = evaluate(clean.normals, noisy, clean, annotated=clean.normals)
    assert rep.cnd == 0 and rep.rmse == 0 and rep.msae == 0 and rep.auc == 1.0 and rep.count == 100
    with pytest.raises(StructuralError):
        evaluate(clean.normals, noisy)
    with pytest.raises(StructuralError):
        evaluate(clean.normals[:5], noisy, clean)
