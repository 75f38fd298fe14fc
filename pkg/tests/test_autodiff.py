import numpy as np
import pytest

from normcraft import autodiff as ad
from normcraft.autodiff import Tensor, finite_diff_check, load_tensors, save_tensors
from normcraft.errors import ParseError, StructuralError

TOL = 1e-4


def probe(op, shape, seed=0, **kw):
    """Scalar objective ``sum(op(x) * c)`` for a fixed random ``c``."""
    r = np.random.default_rng(seed)
    x = Tensor(r.normal(size=shape), requires_grad=True)
    out_shape = op(x).shape
    c = Tensor(r.normal(size=out_shape))
    return (lambda t: ad.sum(ad.mul(op(t), c))), x


def const(shape, seed=1):
    return Tensor(np.random.default_rng(seed).normal(size=shape))


UNARY = {
    "relu": (ad.relu, (4, 5)),
    "sigmoid": (ad.sigmoid, (4, 5)),
    "exp": (ad.exp, (3, 4)),
    "square": (ad.square, (3, 4)),
    "scale": (lambda t: ad.scale(t, -2.5), (3, 4)),
    "neg": (lambda t: -t, (3,)),
    "add": (lambda t: ad.add(t, const((3, 4))), (3, 4)),
    "add_scalar": (lambda t: ad.add(t, 2.0), (3, 4)),
    "sub_left": (lambda t: ad.sub(const((3, 4)), t), (3, 4)),
    "sub_scalar": (lambda t: ad.sub(1.0, t), (3, 4)),
    "mul": (lambda t: ad.mul(t, const((3, 4))), (3, 4)),
    "mul_self": (lambda t: ad.mul(t, t), (3, 4)),
    "matmul_left": (lambda t: ad.matmul(t, const((4, 2))), (2, 3, 4)),
    "matmul_right": (lambda t: ad.matmul(const((2, 3, 4)), t), (4, 2)),
    "matmul_batched": (lambda t: ad.matmul(t, const((2, 4, 3))), (2, 3, 4)),
    "matmul_batched_right": (lambda t: ad.matmul(const((2, 3, 4)), t), (2, 4, 3)),
    "dense_x": (lambda t: ad.dense(t, const((4, 3)), const((3,), 2), "relu"), (2, 5, 4)),
    "dense_w": (lambda t: ad.dense(const((2, 5, 4)), t, const((3,), 2)), (4, 3)),
    "dense_b": (lambda t: ad.dense(const((2, 5, 4)), const((4, 3)), t, "relu"), (3,)),
    "cross3": (lambda t: ad.cross3(t, const((4, 3))), (4, 3)),
    "l2norm": (lambda t: ad.l2norm(t, axis=-1), (4, 3)),
    "normalize": (lambda t: ad.normalize(t, axis=-1), (4, 3)),
    "sum_axis": (lambda t: ad.sum(t, 1), (3, 4, 2)),
    "sum_all": (lambda t: ad.reshape(ad.sum(t), (1,)), (3, 4)),
    "mean_axis": (lambda t: ad.mean(t, 0), (3, 4)),
    "avgpool": (lambda t: ad.avgpool(t, 1), (2, 5, 3)),
    "maxpool": (lambda t: ad.maxpool(t, 1), (2, 6, 3)),
    "softmax": (lambda t: ad.softmax(t, 1), (2, 6)),
    "reshape": (lambda t: ad.reshape(t, (6, 2)), (3, 4)),
    "expand": (lambda t: ad.expand(t, (3, 4, 2)), (3, 1, 2)),
    "transpose": (lambda t: ad.transpose(t, (2, 0, 1)), (2, 3, 4)),
    "concat": (lambda t: ad.concat([t, const((2, 2)), t], axis=1), (2, 3)),
    "narrow": (lambda t: ad.narrow(t, 1, 1, 2), (2, 4)),
    "quat_to_rotmat": (lambda t: ad.quat_to_rotmat(ad.normalize(t, -1)), (3, 4)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_op_gradient(name):
    op, shape = UNARY[name]
    f, x = probe(op, shape)
    err, excluded = finite_diff_check(f, x, return_excluded=True)
    assert err < TOL
    assert len(excluded) < x.data.size


def test_gather_gradient():
    idx = np.random.default_rng(3).integers(0, 5, size=(2, 4, 3))
    f, x = probe(lambda t: ad.gather(t, idx), (2, 5, 3))
    assert finite_diff_check(f, x) < TOL


@pytest.mark.parametrize("part", ["center", "neighbor", "extra"])
def test_edge_sum_gradient(part):
    idx = np.random.default_rng(3).integers(0, 6, size=(2, 4, 3))
    c, n, e = const((2, 4, 5), 4), const((2, 6, 5), 5), const((2, 4, 3, 5), 6)

    def op(t):
        args = {"center": c, "neighbor": n, "extra": e}
        args[part] = t
        return ad.edge_sum(args["center"], args["neighbor"], idx, args["extra"], activation="relu")

    shape = {"center": (2, 4, 5), "neighbor": (2, 6, 5), "extra": (2, 4, 3, 5)}[part]
    f, x = probe(op, shape)
    assert finite_diff_check(f, x) < TOL


def test_edge_sum_equals_composition():
    idx = np.random.default_rng(3).integers(0, 6, size=(2, 4, 3))
    c, n = const((2, 4, 5), 4), const((2, 6, 5), 5)
    ref = ad.relu(ad.add(ad.expand(ad.reshape(c, (2, 4, 1, 5)), (2, 4, 3, 5)), ad.gather(n, idx)))
    assert np.array_equal(ad.edge_sum(c, n, idx, activation="relu").data, ref.data)


def test_dense_equals_matmul_plus_bias():
    x, w, b = const((3, 4, 5)), const((5, 2), 2), const((2,), 3)
    ref = ad.add(ad.matmul(x, w), ad.expand(ad.reshape(b, (1, 1, 2)), (3, 4, 2)))
    assert np.allclose(ad.dense(x, w, b).data, ref.data, rtol=1e-15, atol=1e-15)


def test_kinks_are_excluded():
    x = Tensor(np.array([0.0, 1.0, -1.0]), requires_grad=True)
    err, excluded = finite_diff_check(lambda t: ad.sum(ad.relu(t)), x, return_excluded=True)
    assert excluded == [0] and err < 1e-10


def test_fan_out_accumulates():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = ad.sum(ad.add(ad.mul(x, x), ad.scale(x, 3.0)))
    y.backward()
    assert np.allclose(x.grad, 2 * x.data + 3)


def test_non_scalar_backward_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(StructuralError):
        ad.scale(x, 2.0).backward()


def test_shape_errors():
    with pytest.raises(StructuralError):
        ad.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(StructuralError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(StructuralError):
        ad.expand(Tensor(np.ones((2, 3))), (4, 3))
    with pytest.raises(StructuralError):
        ad.gather(Tensor(np.ones((1, 3, 2))), np.array([[[3]]]))


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.mul(x, x)
    assert not y.requires_grad


def test_quaternion_identity_and_orthogonality(rng):
    R = ad.quat_to_rotmat(Tensor(np.array([[1.0, 0, 0, 0]]))).data[0]
    assert np.array_equal(R, np.eye(3))
    q = rng.normal(size=(20, 4))
    R = ad.quat_to_rotmat(ad.normalize(Tensor(q), -1)).data
    for r in R:
        assert np.linalg.norm(np.eye(3) - r @ r.T) < 1e-9
        assert np.linalg.det(r) == pytest.approx(1.0)


def test_checkpoint_round_trip(tmp_path, rng):
    tensors = {"a": rng.normal(size=(3, 4)), "b.c": np.array(2.5), "e": np.zeros((0, 3))}
    save_tensors(tmp_path / "w.bin", tensors)
    back = load_tensors(tmp_path / "w.bin")
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape and np.array_equal(back[k], tensors[k])


def test_checkpoint_corruption(tmp_path, rng):
    p = tmp_path / "w.bin"
    save_tensors(p, {"a": rng.normal(size=10)})
    raw = p.read_bytes()
    p.write_bytes(raw[:-3])
    with pytest.raises(ParseError):
        load_tensors(p)
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ParseError):
        load_tensors(p)


def test_no_grad_is_per_thread():
    from concurrent.futures import ThreadPoolExecutor

    def work(_):
        with ad.no_grad():
            return ad.add(Tensor(np.ones(2), requires_grad=True), 1.0).requires_grad

    with ThreadPoolExecutor(4) as pool:
        assert not any(pool.map(work, range(32)))
    assert ad.add(Tensor(np.ones(2), requires_grad=True), 1.0).requires_grad
