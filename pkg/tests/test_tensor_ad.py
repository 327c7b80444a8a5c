import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eitdsm import tensor_ad as ad
from eitdsm.selfcheck import op_checks
from eitdsm.tensor_ad.checkpoint import CheckpointError, decode_text, encode_text, load_tensors, save_tensors
from eitdsm.tensor_ad.gradcheck import check_gradients


def test_square_sum_gradient_exact(rng):
    x = ad.parameter(rng.standard_normal((3, 4)))
    ad.reduce_sum(ad.mul(x, x)).backward()
    assert np.array_equal(x.grad, 2 * x.data)


def test_layer_norm_constant_channels():
    x = ad.Tensor(np.full((2, 5, 3, 3), 7.0))
    out = ad.layer_norm(x, np.full(5, 2.0), np.zeros(5), axis=1)
    assert np.all(out.data == 0)


def test_all_ops_pass_gradcheck(rng):
    results = op_checks(rng, n_shapes=5)
    bad = [(r.name, r.error) for r in results if not r.ok]
    assert not bad
    names = {r.name.split("[")[0] for r in results}
    assert {"add", "mul", "scale", "matmul", "conv3x3", "upsample2", "downsample2", "layer_norm",
            "relu", "sigmoid", "softmax", "reduce_sum", "reduce_mean", "concat"} <= names


@pytest.mark.parametrize("op,a,b", [
    (ad.add, (2, 3), (4, 3)),
    (ad.matmul, (2, 3), (4, 5)),
])
def test_shape_errors_report_both_shapes(op, a, b):
    with pytest.raises(ad.ShapeError) as e:
        op(np.zeros(a), np.zeros(b))
    assert str(a) in str(e.value) and str(b) in str(e.value)


def test_conv_shape_error():
    with pytest.raises(ad.ShapeError):
        ad.conv3x3(np.zeros((1, 2, 5, 5)), np.zeros((3, 4, 3, 3)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([((3, 4), (4,)), ((2, 3, 4), (1, 4)), ((2, 1), (2, 5))]))
def test_broadcast_gradients(seed, shapes):
    r = np.random.default_rng(seed)
    a, b = (ad.parameter(r.standard_normal(s)) for s in shapes)
    R = r.standard_normal(np.broadcast_shapes(*shapes))
    err = check_gradients(lambda: ad.reduce_sum(ad.mul(ad.mul(a, b), R)), [a, b])
    assert err < 1e-5


def test_backward_linear_in_upstream(rng):
    x = ad.parameter(rng.standard_normal((1, 2, 5, 5)))
    w = ad.parameter(rng.standard_normal((3, 2, 3, 3)))

    def grads(c):
        x.grad = w.grad = None
        y = ad.sigmoid(ad.conv3x3(ad.upsample2(x), w))
        ad.scale(ad.reduce_sum(ad.mul(y, y)), c).backward()
        return x.grad.copy(), w.grad.copy()

    g1, g3 = grads(1.0), grads(3.0)
    for a, b in zip(g1, g3):
        assert np.allclose(b, 3 * a, rtol=1e-12, atol=0)


def test_shared_subgraph_accumulates(rng):
    x = ad.parameter(rng.standard_normal(4))
    y = ad.mul(x, x)
    ad.reduce_sum(ad.add(y, ad.mul(y, x))).backward()
    assert np.allclose(x.grad, 2 * x.data + 3 * x.data**2)


# -- optimizer and schedule -------------------------------------------------------

def test_adam_zero_gradient_and_counter():
    w = ad.parameter(np.array([1.0, -2.0]))
    opt = ad.Adam([w])
    w.grad = np.zeros(2)
    opt.step(0.1)
    assert np.array_equal(w.data, [1.0, -2.0])
    assert opt.state.step == 1
    opt.step(0.1)
    assert opt.state.step == 2


def test_adam_quadratic():
    w = ad.parameter(np.array(0.0))
    opt = ad.Adam([w])
    for _ in range(500):
        opt.zero_grad()
        d = ad.add_scalar(w, -3.0)
        ad.mul(d, d).backward()
        opt.step(0.1)
    assert abs(w.data - 3.0) < 1e-3


def test_adam_rejects_nonfinite():
    w = ad.parameter(np.ones(3))
    opt = ad.Adam([w])
    w.grad = np.array([1.0, np.nan, 0.0])
    with pytest.raises(ad.NonFiniteGradient):
        opt.step(0.1)


def test_one_cycle_schedule():
    s = ad.LrSchedule(total_epochs=50, lr_max=1e-3, warmup_epochs=10)
    assert ad.lr_at(s, 0.0) == pytest.approx(1e-6, rel=1e-12)
    assert ad.lr_at(s, 10 / 50) == pytest.approx(1e-3, rel=1e-12)
    assert ad.lr_at(s, 1.0) == pytest.approx(1e-6, rel=1e-12)
    ts = np.linspace(0, 1, 201)
    v = np.array([ad.lr_at(s, t) for t in ts])
    peak = ts <= 0.2
    assert np.all(np.diff(v[peak]) >= 0) and np.all(np.diff(v[~peak]) <= 0)


# -- checkpoints ------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    t = {"a": rng.standard_normal((2, 3, 3, 3)), "b": np.array(1.5), "__config__": encode_text("m=9\n")}
    p = tmp_path / "w.uitw"
    save_tensors(p, t)
    back = load_tensors(p)
    assert list(back) == list(t)
    for k in t:
        assert back[k].shape == np.shape(t[k]) and np.array_equal(back[k], t[k])
    assert decode_text(back["__config__"]) == "m=9\n"
    raw = p.read_bytes()
    assert raw[:4] == b"UITW"


def test_checkpoint_corruption(tmp_path):
    p = tmp_path / "w.uitw"
    save_tensors(p, {"a": np.ones(4)})
    raw = p.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        load_tensors(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError):
        load_tensors(tmp_path / "short")
