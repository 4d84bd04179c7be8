import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellscape.autodiff import (
    OptimizerState,
    REGISTRY,
    Tape,
    backward,
    cosine_lr,
    glorot_init,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from cellscape.errors import NoTape, ShapeMismatch
from conftest import central_difference

dims = st.integers(2, 16)
seeds = st.integers(0, 2**31)


def rel_err(a, b):
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1.0)
    return np.max(np.abs(a - b)) / denom


# --- registry operations, finite-difference property tests ----------------


@settings(max_examples=30, deadline=None)
@given(dims, dims, seeds)
def test_linear_op_matches_finite_differences(batch, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, d))
    # keep points away from the rectifier kink, where FD is one-sided
    x[np.abs(x) < 1e-3] += 0.01
    w = rng.standard_normal((d, d))

    def loss_of_w(wv):
        t = Tape()
        out = REGISTRY["linear"].apply(t, t.leaf(x), t.leaf(wv))
        return float(t.half_sum_sq(out).data)

    t = Tape()
    w_leaf = t.leaf(w)
    loss = t.half_sum_sq(REGISTRY["linear"].apply(t, t.leaf(x), w_leaf))
    backward(t, loss)
    fd = central_difference(loss_of_w, w, 1e-4)
    assert rel_err(w_leaf.grad, fd) <= 1e-5


@settings(max_examples=30, deadline=None)
@given(dims, dims, seeds)
def test_linear_op_input_gradient(batch, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, d))
    x[np.abs(x) < 1e-3] += 0.01
    w = rng.standard_normal((d, d))

    def loss_of_x(xv):
        t = Tape()
        out = REGISTRY["linear"].apply(t, t.leaf(xv), t.leaf(w))
        return float(t.half_sum_sq(out).data)

    t = Tape()
    x_leaf = t.leaf(x)
    loss = t.half_sum_sq(REGISTRY["linear"].apply(t, x_leaf, t.leaf(w)))
    backward(t, loss)
    fd = central_difference(loss_of_x, x, 1e-4)
    assert rel_err(x_leaf.grad, fd) <= 1e-5


def test_identity_op_passthrough():
    t = Tape()
    x = t.leaf(np.arange(6.0).reshape(2, 3))
    out = REGISTRY["identity"].apply(t, x, None)
    assert out is x


def test_zero_op_output_and_gradient():
    t = Tape()
    x = t.leaf(np.ones((3, 4)))
    out = REGISTRY["zero"].apply(t, x, None)
    loss = t.half_sum_sq(out)
    backward(t, loss)
    assert np.all(out.data == 0.0)
    assert np.all(x.grad == 0.0)


@settings(max_examples=30, deadline=None)
@given(dims, dims, seeds)
def test_softmax_cross_entropy_finite_differences(batch, classes, seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((batch, classes))
    labels = rng.integers(0, classes, size=batch)

    def loss_of(lv):
        t = Tape()
        return float(t.softmax_cross_entropy(t.leaf(lv), labels).data)

    t = Tape()
    leaf = t.leaf(logits)
    loss = t.softmax_cross_entropy(leaf, labels)
    backward(t, loss)
    fd = central_difference(loss_of, logits, 1e-5)
    assert rel_err(leaf.grad, fd) <= 1e-6


def test_softmax_uniform_logits_identity():
    # equal logits: gradient = (1/C - one_hot) / batch
    batch, classes = 4, 5
    t = Tape()
    leaf = t.leaf(np.zeros((batch, classes)))
    labels = np.array([0, 1, 2, 3])
    loss = t.softmax_cross_entropy(leaf, labels)
    backward(t, loss)
    expected = np.full((batch, classes), 1.0 / classes)
    expected[np.arange(batch), labels] -= 1.0
    expected /= batch
    assert np.allclose(leaf.grad, expected, atol=1e-15)
    assert math.isclose(float(loss.data), math.log(classes))


def test_gradient_accumulates_on_reuse():
    # y = x + x has dy/dx = 2
    t = Tape()
    x = t.leaf(np.ones((2, 2)))
    loss = t.half_sum_sq(t.add(x, x))
    backward(t, loss)
    assert np.allclose(x.grad, 4.0 * np.ones((2, 2)))


def test_gradient_linearity():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 4))
    w = rng.standard_normal((4, 4))

    def grad_of(scale_a, scale_b):
        t = Tape()
        w_leaf = t.leaf(w)
        xa = t.leaf(x)
        la = t.scale(t.half_sum_sq(t.dense(xa, w_leaf)), scale_a)
        lb = t.scale(t.half_sum_sq(t.relu(t.dense(xa, w_leaf))), scale_b)
        backward(t, t.add(la, lb))
        return w_leaf.grad.copy()

    ga = grad_of(1.0, 0.0)
    gb = grad_of(0.0, 1.0)
    gab = grad_of(1.0, 1.0)
    assert np.allclose(ga + gb, gab, atol=1e-12)


def test_unreached_leaf_has_no_gradient():
    t = Tape()
    used = t.leaf(np.ones((2, 2)))
    unused = t.leaf(np.ones((2, 2)))
    loss = t.half_sum_sq(used)
    backward(t, loss)
    assert unused.grad is None


def test_backward_foreign_value_rejected():
    t = Tape()
    other = Tape()
    loss = other.half_sum_sq(other.leaf(np.ones(3).reshape(1, 3)))
    with pytest.raises(NoTape):
        backward(t, loss)


def test_dense_shape_mismatch():
    t = Tape()
    with pytest.raises(ShapeMismatch):
        t.dense(t.leaf(np.ones((2, 3))), t.leaf(np.ones((4, 5))))


def test_forward_determinism():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 6))
    w = rng.standard_normal((6, 6))

    def run():
        t = Tape()
        return t.dense(t.relu(t.leaf(x)), t.leaf(w)).data

    assert np.array_equal(run(), run())


# --- optimizer ------------------------------------------------------------


def test_sgd_plain_step():
    params = {"w": np.array([1.0])}
    grads = {"w": np.array([1.0])}
    state = OptimizerState(momentum=0.0, weight_decay=0.0)
    params, state = sgd_step(params, grads, state, lr=0.1)
    assert np.allclose(params["w"], 0.9)


def test_sgd_momentum_two_steps():
    # v1 = 1, w1 = -0.1; v2 = 0.9 + 1 = 1.9, w2 = -0.1 - 0.19 = -0.29
    params = {"w": np.array([0.0])}
    grads = {"w": np.array([1.0])}
    state = OptimizerState(momentum=0.9, weight_decay=0.0)
    params, state = sgd_step(params, grads, state, lr=0.1)
    params, state = sgd_step(params, grads, state, lr=0.1)
    assert np.allclose(params["w"], -0.29)


def test_sgd_zero_gradient_zero_decay():
    params = {"w": np.array([2.0, -3.0])}
    grads = {"w": np.zeros(2)}
    state = OptimizerState(momentum=0.9, weight_decay=0.0)
    params, _ = sgd_step(params, grads, state, lr=0.5)
    assert np.array_equal(params["w"], np.array([2.0, -3.0]))


def test_sgd_weight_decay_pulls_to_zero():
    params = {"w": np.array([1.0])}
    grads = {"w": np.zeros(1)}
    state = OptimizerState(momentum=0.0, weight_decay=0.1)
    params, _ = sgd_step(params, grads, state, lr=1.0)
    assert np.allclose(params["w"], 0.9)


def test_sgd_shape_mismatch():
    state = OptimizerState()
    with pytest.raises(ShapeMismatch):
        sgd_step({"w": np.ones(3)}, {"w": np.ones(4)}, state, lr=0.1)


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 30, 0.025) == 0.025
    assert cosine_lr(30, 30, 0.025) == 0.0
    assert cosine_lr(15, 30, 0.025) == pytest.approx(0.0125)


def test_cosine_schedule_domain():
    with pytest.raises(ValueError):
        cosine_lr(-1, 10, 0.1)
    with pytest.raises(ValueError):
        cosine_lr(11, 10, 0.1)
    with pytest.raises(ValueError):
        cosine_lr(0, 0, 0.1)


def test_glorot_bound():
    rng = np.random.default_rng(0)
    w = glorot_init((50, 30), rng)
    bound = math.sqrt(6.0 / 80.0)
    assert np.max(np.abs(w)) <= bound
    assert np.max(np.abs(w)) > 0.5 * bound  # actually fills the range


# --- checkpoint container -------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    params = {
        "stem.w": rng.standard_normal((8, 4)),
        "stem.b": rng.standard_normal(8),
        "head.w": rng.standard_normal((3, 8)),
    }
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert sorted(loaded) == sorted(params)
    for name in params:
        assert np.array_equal(loaded[name], params[name])
        assert loaded[name].dtype == np.float64


def test_checkpoint_header_layout(tmp_path):
    import json
    import struct

    params = {"a": np.zeros((2, 2)), "b": np.ones(3)}
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path)
    blob = path.read_bytes()
    (header_len,) = struct.unpack("<I", blob[:4])
    header = json.loads(blob[4 : 4 + header_len])
    assert [b["name"] for b in header] == ["a", "b"]
    assert header[0] == {"name": "a", "shape": [2, 2], "offset": 0}
    assert header[1]["offset"] == 4
    payload = np.frombuffer(blob[4 + header_len :], dtype="<f8")
    assert payload.size == 7


def test_checkpoint_write_is_deterministic(tmp_path):
    params = {"w": np.arange(6.0).reshape(2, 3)}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(params, p1)
    save_checkpoint(params, p2)
    assert p1.read_bytes() == p2.read_bytes()
