import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lfs import numgrad as ng

from .gradcases import CASES, check_case
from .oracles import central_differences, relative_error


def test_quadratic_gradient():
    g = ng.ParamGraph({"x": np.array([1.0, 2.0])})
    loss, grads = ng.eval_with_gradients(g, lambda p: ng.tsum(ng.mul(p["x"], p["x"])))
    assert loss == 5.0
    np.testing.assert_array_equal(grads["x"], [2.0, 4.0])


def test_non_participating_parameter_has_zero_gradient():
    g = ng.ParamGraph({"w": np.ones((2, 3)), "x": np.array([1.0])})
    loss, grads = ng.eval_with_gradients(g, lambda p: ng.as_tensor(5.0))
    assert loss == 5.0
    assert np.all(grads["w"] == 0) and grads["w"].shape == (2, 3)


def test_partial_participation():
    g = ng.ParamGraph({"a": np.array([3.0]), "b": np.array([4.0])})
    _, grads = ng.eval_with_gradients(g, lambda p: ng.tsum(ng.square(p["a"])))
    assert grads["a"][0] == 6.0 and grads["b"][0] == 0.0


def test_two_layer_mlp_matches_finite_differences():
    rng = np.random.default_rng(0)
    g = ng.ParamGraph()
    ng.init_affine(g, "l1", 8, 16, rng)
    ng.init_affine(g, "l2", 16, 1, rng)
    for t in g.params.values():
        t.data = t.data + 0.1 * rng.standard_normal(t.shape)
    x = rng.standard_normal((5, 8))

    def forward(p):
        h = ng.tanh(ng.affine(ng.as_tensor(x), p["l1.w"], p["l1.b"]))
        return ng.tsum(ng.square(ng.affine(h, p["l2.w"], p["l2.b"])))

    _, grads = ng.eval_with_gradients(g, forward)
    raw = {n: t.data for n, t in g.items()}

    def value():
        with ng.no_grad():
            return float(forward(g).data)

    numeric = central_differences(value, raw)
    assert relative_error(grads, numeric) < 1e-4


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_gradients(name):
    errors = [check_case(name, seed) for seed in range(10)]
    assert max(errors) < 1e-4, (name, max(errors))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ng.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ng.matmul(np.zeros((2, 3)), np.zeros((4, 5)))


def test_broadcast_shape_error():
    with pytest.raises(ng.ShapeError, match=r"\(2, 3\).*\(4,\)"):
        ng.add(np.zeros((2, 3)), np.zeros(4))


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
def test_checked_mode_names_operation():
    with ng.checked():
        x = ng.Tensor(np.array([1000.0]), requires_grad=True)
        with pytest.raises(ng.NonFiniteError, match="exp"):
            ng.exp(x)
        with pytest.raises(ng.NonFiniteError):
            ng.Tensor(np.array([np.nan]))
    # unchecked mode lets overflow through
    assert np.isinf(ng.exp(ng.Tensor([1000.0])).data[0])


def test_no_grad_records_nothing():
    w = ng.Tensor(np.ones(3), requires_grad=True)
    with ng.no_grad():
        out = ng.tsum(ng.mul(w, w))
    assert not out.requires_grad


# ---------------------------------------------------------------- l2_normalize

def test_l2_normalize_three_four_five():
    np.testing.assert_allclose(ng.l2_normalize(np.array([3.0, 4.0])).data, [0.6, 0.8], rtol=0, atol=1e-15)


def test_l2_normalize_unit_vector_unchanged():
    v = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(ng.l2_normalize(v).data, v)


def test_l2_normalize_random_128():
    v = np.random.default_rng(3).standard_normal(128)
    assert abs(np.linalg.norm(ng.l2_normalize(v).data) - 1.0) < 1e-12


def test_l2_normalize_zero_vector_rejected():
    with pytest.raises(ValueError, match="degenerate"):
        ng.l2_normalize(np.zeros((2, 4)), axis=-1)


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (3, 7), elements=finite))
def test_l2_normalize_idempotent(v):
    if np.any(np.linalg.norm(v, axis=-1) < 1e-6):
        return
    once = ng.l2_normalize(v).data
    np.testing.assert_allclose(ng.l2_normalize(once).data, once, rtol=0, atol=1e-12)


# ---------------------------------------------------------------- softmax

def test_softmax_uniform():
    np.testing.assert_allclose(ng.softmax_temp(np.full(7, 2.5), 0.3).data, np.full(7, 1 / 7), atol=1e-15)


def test_softmax_two_scores():
    p = ng.softmax_temp(np.array([2.0, 0.0]), 1.0).data
    e2 = np.exp(2.0)
    np.testing.assert_allclose(p, [e2 / (e2 + 1), 1 / (e2 + 1)], rtol=1e-14)
    np.testing.assert_allclose(p, [0.8808, 0.1192], atol=1e-4)


def test_softmax_low_temperature():
    assert ng.softmax_temp(np.array([2.0, 0.0]), 0.01).data[0] > 0.999999


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_softmax_rejects_nonpositive_temperature(tau):
    with pytest.raises(ValueError):
        ng.softmax_temp(np.array([1.0, 2.0]), tau)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (4, 9), elements=st.floats(-50, 50)), st.floats(-100, 100), st.floats(0.05, 5.0))
def test_softmax_simplex_and_shift_invariance(scores, shift, tau):
    p = ng.softmax_temp(scores, tau).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, rtol=0, atol=1e-10)
    np.testing.assert_allclose(ng.softmax_temp(scores + shift, tau).data, p, rtol=0, atol=1e-10)


def test_operations_are_pure():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 9, 9, 3))
    w = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    a = ng.conv2d(ng.Tensor(x), ng.Tensor(w), ng.Tensor(b), stride=2).data
    c = ng.conv2d(ng.Tensor(x), ng.Tensor(w), ng.Tensor(b), stride=2).data
    assert a.tobytes() == c.tobytes()


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 9, 8, 3))
    w = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    out = ng.conv2d(ng.Tensor(x), ng.Tensor(w), ng.Tensor(b), stride=2).data
    ho, wo = (9 - 3) // 2 + 1, (8 - 3) // 2 + 1
    ref = np.zeros((2, ho, wo, 4))
    for n in range(2):
        for i in range(ho):
            for j in range(wo):
                patch = x[n, 2 * i:2 * i + 3, 2 * j:2 * j + 3, :]
                for o in range(4):
                    ref[n, i, j, o] = np.sum(patch * w[:, :, :, o]) + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------- adam & checkpoint

def test_adam_minimizes_quadratic():
    g = ng.ParamGraph({"x": np.array([3.0, -2.0])})
    opt = ng.Adam(g, lr=0.1)
    for _ in range(500):
        _, grads = ng.eval_with_gradients(g, lambda p: ng.tsum(ng.square(p["x"])))
        opt.step(grads)
    assert np.all(np.abs(g["x"].data) < 1e-2)


def test_checkpoint_roundtrip(tmp_path):
    arrays_ = {"enc.w": np.random.default_rng(0).standard_normal((3, 3, 2, 4)), "scalar": np.array(2.5),
               "v": np.arange(5.0)}
    path = tmp_path / "c.lfsc"
    ng.save_checkpoint(path, arrays_)
    raw = path.read_bytes()
    assert raw[:4] == b"LFSC"
    assert struct.unpack_from("<II", raw, 4) == (1, 3)
    back = ng.load_checkpoint(path)
    assert list(back) == list(arrays_)
    for k in arrays_:
        assert back[k].shape == arrays_[k].shape
        assert back[k].tobytes() == np.asarray(arrays_[k], dtype="<f8").tobytes()


def test_checkpoint_record_layout():
    from lfs.numgrad.checkpoint import encode_checkpoint
    raw = encode_checkpoint({"ab": np.array([[1.0, 2.0]])})
    buf = io.BytesIO(raw[12:])
    assert struct.unpack("<H", buf.read(2)) == (2,)
    assert buf.read(2) == b"ab"
    assert struct.unpack("<B", buf.read(1)) == (2,)
    assert struct.unpack("<2I", buf.read(8)) == (1, 2)
    assert struct.unpack("<2d", buf.read(16)) == (1.0, 2.0)


@pytest.mark.parametrize("mutate,msg", [
    (lambda b: b"XXXX" + b[4:], "bad magic"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "version"),
])
def test_checkpoint_corruption(mutate, msg):
    from lfs.numgrad.checkpoint import decode_checkpoint, encode_checkpoint
    raw = encode_checkpoint({"a": np.ones(4)})
    with pytest.raises(ng.CheckpointError, match=msg):
        decode_checkpoint(mutate(raw))
