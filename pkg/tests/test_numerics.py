import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sslst.numerics import (
    Graph,
    NonFiniteError,
    OptimizerState,
    Schedule,
    ShapeError,
    Tensor,
    adam_step,
    forward,
    gradients,
    grad,
    ops,
    schedule_lr,
)

from gradcheck import check, numeric_grad

N_POINTS = 20


def test_tanh_at_zero():
    assert ops.tanh(Tensor(0.0)).item() == 0.0


def test_softmax_uniform():
    out = ops.softmax(Tensor([1.0, 1.0, 1.0])).data
    np.testing.assert_allclose(out, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_log_softmax_matches_log_of_softmax():
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.normal(size=8) * 3
        # independent composition: exp / sum, then log
        e = np.exp(x)
        expected = np.log(e / e.sum())
        np.testing.assert_allclose(ops.log_softmax(Tensor(x)).data, expected, rtol=0, atol=1e-12)


def test_tanh_derivative_at_half():
    x = Tensor(0.5, requires_grad=True)
    (g,) = grad(ops.tanh(x), [x])
    expected = 1 - math.tanh(0.5) ** 2
    assert abs(expected - 0.78645) < 1e-5
    fd = (math.tanh(0.5 + 1e-6) - math.tanh(0.5 - 1e-6)) / 2e-6
    assert abs(float(g) - fd) < 1e-7


def test_constant_loss_gives_zero_gradients():
    w = Tensor(np.ones((3, 2)), requires_grad=True)
    loss = ops.sum(Tensor(np.ones(4)))
    (g,) = grad(loss, [w])
    assert np.all(g == 0)


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(1, 5))
    target = 3
    x = Tensor(logits, requires_grad=True)
    (g,) = grad(ops.cross_entropy(x, [target]), [x])
    p = np.exp(logits) / np.exp(logits).sum()
    onehot = np.eye(5)[target]
    np.testing.assert_allclose(g[0], p[0] - onehot, atol=1e-12)

    def ce(z):
        zz = z[0]
        return -(zz[target] - np.log(np.exp(zz).sum()))

    fd = numeric_grad(ce, [logits.copy()], 0)
    np.testing.assert_allclose(g, fd, atol=1e-6)


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        grad(ops.tanh(x), [x])


# -- finite-difference suite, one entry per differentiable kernel ---------------

def _draw(rng, kind):
    r = rng.normal
    if kind == "affine":
        return (lambda x, w, b: ops.affine(x, w, b)), [r(size=(3, 4)), r(size=(4, 2)), r(size=2)]
    if kind == "conv1d":
        return (lambda x, w, b: ops.conv1d(x, w, b, stride=2, padding=(2, 1))), [
            r(size=(2, 7, 3)), r(size=(3, 3, 2)), r(size=2)]
    if kind == "conv2d":
        return (lambda x, w, b: ops.conv2d(x, w, b, stride=(2, 2), padding=(1, 1))), [
            r(size=(2, 5, 4, 2)), r(size=(3, 3, 2, 3)), r(size=3)]
    if kind == "tanh":
        return ops.tanh, [r(size=(3, 4))]
    if kind == "sigmoid":
        return ops.sigmoid, [r(size=(3, 4)) * 3]
    if kind == "relu":
        x = r(size=(3, 4))
        x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
        return ops.relu, [x]
    if kind == "softmax":
        return (lambda x: ops.softmax(x, axis=-1)), [r(size=(3, 5))]
    if kind == "masked_softmax":
        mask = np.array([[1, 1, 0, 1, 0]] * 3, dtype=bool)
        return (lambda x: ops.softmax(x, axis=-1, mask=mask)), [r(size=(3, 5))]
    if kind == "log_softmax":
        return (lambda x: ops.log_softmax(x, axis=-1)), [r(size=(3, 5))]
    if kind == "log_sigmoid":
        return ops.log_sigmoid, [r(size=(3, 4)) * 4]
    if kind == "add":
        return (lambda a, b: ops.add(a, b)), [r(size=(3, 4)), r(size=(4,))]
    if kind == "mul":
        return (lambda a, b: ops.mul(a, b)), [r(size=(3, 4)), r(size=(3, 1))]
    if kind == "matmul":
        return (lambda a, b: ops.matmul(a, b)), [r(size=(2, 3, 4)), r(size=(2, 4, 2))]
    if kind == "concat":
        return (lambda a, b: ops.concat([a, b], axis=1)), [r(size=(2, 3)), r(size=(2, 2))]
    if kind == "lstm_cell":
        return ops.lstm_cell, [r(size=(2, 3)), r(size=(2, 4)), r(size=(2, 4)),
                               r(size=(3, 16)) * 0.5, r(size=(4, 16)) * 0.5, r(size=16) * 0.5]
    if kind == "lstm_sequence":
        mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=float)
        reverse = bool(rng.integers(2))
        return (lambda x, wx, wh, b: ops.lstm_sequence(x, wx, wh, b, mask=mask, reverse=reverse)), [
            r(size=(2, 4, 3)), r(size=(3, 12)) * 0.5, r(size=(3, 12)) * 0.5, r(size=12) * 0.5]
    if kind == "layer_norm":
        return (lambda x, g, b: ops.layer_norm(x, g, b)), [r(size=(3, 5)), r(size=5), r(size=5)]
    if kind == "embedding":
        ids = rng.integers(0, 4, size=(2, 3))
        return (lambda t: ops.embedding(ids, t)), [r(size=(4, 3))]
    if kind == "cross_entropy":
        targets = rng.integers(0, 5, size=4)
        weights = np.array([1.0, 0.0, 1.0, 1.0])
        return (lambda x: ops.cross_entropy(x, targets, weights)), [r(size=(4, 5))]
    if kind == "getitem":
        return (lambda x: x[:, 1:3]), [r(size=(3, 4))]
    if kind == "reshape_transpose":
        return (lambda x: ops.transpose(x.reshape(4, 3), (1, 0))), [r(size=(3, 4))]
    if kind == "div":
        return (lambda a, b: ops.div(a, b)), [r(size=(3,)), r(size=(3,)) + 3]
    raise KeyError(kind)


KINDS = ["affine", "conv1d", "conv2d", "tanh", "sigmoid", "relu", "softmax", "masked_softmax",
         "log_softmax", "log_sigmoid", "add", "mul", "matmul", "concat", "lstm_cell", "lstm_sequence",
         "layer_norm", "embedding", "cross_entropy", "getitem", "reshape_transpose", "div"]


@pytest.mark.parametrize("kind", KINDS)
def test_kernel_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    for _ in range(N_POINTS):
        fn, arrs = _draw(rng, kind)
        check(fn, arrs, tol=1e-4)


def test_lstm_sequence_matches_stepwise_cells():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 5, 3))
    wx, wh, b = rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=8)
    seq = ops.lstm_sequence(Tensor(x), Tensor(wx), Tensor(wh), Tensor(b)).data
    h = np.zeros((2, 2))
    c = np.zeros((2, 2))
    for t in range(5):
        hc = ops.lstm_cell(Tensor(x[:, t]), Tensor(h), Tensor(c), Tensor(wx), Tensor(wh), Tensor(b)).data
        h, c = hc[:, :2], hc[:, 2:]
        np.testing.assert_allclose(seq[:, t], h, atol=1e-12)


def test_lstm_sequence_padding_is_inert():
    rng = np.random.default_rng(3)
    wx, wh, b = rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=8)
    x = rng.normal(size=(1, 3, 3))
    padded = np.concatenate([x, rng.normal(size=(1, 4, 3))], axis=1)
    mask = np.array([[1, 1, 1, 0, 0, 0, 0]])
    for reverse in (False, True):
        short = ops.lstm_sequence(Tensor(x), Tensor(wx), Tensor(wh), Tensor(b), reverse=reverse).data
        long = ops.lstm_sequence(Tensor(padded), Tensor(wx), Tensor(wh), Tensor(b), mask=mask, reverse=reverse).data
        np.testing.assert_allclose(long[:, :3], short, atol=1e-12)
        assert np.all(long[:, 3:] == 0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_rows_are_distributions(x):
    p = ops.softmax(Tensor(x)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)


def test_forward_and_gradients_are_deterministic():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(4, 6))
    w = rng.normal(size=(6, 3))

    def run():
        wt = Tensor(w.copy(), requires_grad=True)
        loss = ops.cross_entropy(ops.tanh(ops.affine(Tensor(x), wt)), [0, 1, 2, 1])
        return loss.data.copy(), grad(loss, [wt])[0]

    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes()
    assert g1.tobytes() == g2.tobytes()


# -- static graph surface ------------------------------------------------------

def _mlp_graph(rng):
    g = Graph()
    x = g.input("x")
    y = g.input("y")
    w = g.param("w", rng.normal(size=(4, 3)))
    b = g.param("b", np.zeros(3))
    h = g.add("affine", x, w, b)
    a = g.add("tanh", h, name="hidden")
    g.add("cross_entropy", a, y, name="loss")
    return g


def test_graph_forward_and_gradients():
    rng = np.random.default_rng(5)
    g = _mlp_graph(rng)
    x = rng.normal(size=(2, 4))
    y = np.array([0, 2])
    out = forward(g, {"x": x, "y": y}, outputs=["hidden", "loss"])
    assert out["hidden"].shape == (2, 3)
    grads = gradients(g, {"x": x, "y": y}, "loss")
    assert set(grads) == {"w", "b"}
    w0 = g.params[2].data.copy()

    def loss_of(w):
        logits = np.tanh(x @ w)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        return -logp[[0, 1], y].mean()

    np.testing.assert_allclose(grads["w"], numeric_grad(loss_of, [w0], 0), atol=1e-7)


def test_graph_rejects_shape_mismatch_with_node_id():
    rng = np.random.default_rng(6)
    g = _mlp_graph(rng)
    with pytest.raises(ShapeError) as info:
        forward(g, {"x": rng.normal(size=(2, 5)), "y": np.array([0, 1])})
    assert info.value.node_id == 4


@pytest.mark.filterwarnings("ignore:overflow")
def test_graph_rejects_non_finite_with_node_id():
    g = Graph()
    x = g.input("x")
    g.add("sum", g.add("mul", x, x))
    with pytest.raises(NonFiniteError) as info:
        forward(g, {"x": np.array([1e200])})
    assert info.value.node_id == 1


def test_graph_rejects_non_scalar_loss():
    g = Graph()
    x = g.input("x")
    w = g.param("w", np.ones(2))
    g.add("mul", x, w)
    with pytest.raises(ValueError):
        gradients(g, {"x": np.ones(2)}, 2)


# -- Adam and schedules --------------------------------------------------------

def test_adam_zero_gradient_is_fixed_point():
    params = {"w": np.array([1.0, -2.0]), "b": np.array([0.5])}
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    state = OptimizerState()
    for _ in range(5):
        params2, state = adam_step(params, grads, state, 1e-3)
        for k in params:
            assert np.array_equal(params2[k], params[k])
    assert state.step == 5


def test_adam_first_step_closed_form():
    new, state = adam_step({"p": np.array(1.0)}, {"p": np.array(0.5)}, OptimizerState(), 1e-3)
    expected = 1.0 - 1e-3 * (0.5 / (0.5 + 1e-8))
    assert abs(float(new["p"]) - expected) < 1e-15
    assert abs(float(new["p"]) - 0.999) < 1e-9
    assert state.step == 1


def test_adam_is_deterministic():
    rng = np.random.default_rng(7)
    params = {"w": rng.normal(size=(3, 3))}
    grads = {"w": rng.normal(size=(3, 3))}
    state = OptimizerState()
    a, sa = adam_step(params, grads, state, 1e-3)
    b, sb = adam_step(params, grads, state, 1e-3)
    assert a["w"].tobytes() == b["w"].tobytes()
    assert sa.first["w"].tobytes() == sb.first["w"].tobytes()
    assert state.step == 0


def test_adam_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, OptimizerState(), 1e-3)


def test_fixed_schedule():
    assert schedule_lr(Schedule("fixed", peak=1e-3), 12345) == 1e-3


def test_polynomial_schedule_decay_midpoint():
    s = Schedule("polynomial", peak=5e-5, warmup=0, total=10000, end=0.0)
    assert s(0) == 5e-5
    assert abs(s(5000) - 2.5e-5) < 1e-18
    assert s(10000) == 0.0
    assert s(20000) == 0.0


def test_polynomial_schedule_warmup_midpoint():
    s = Schedule("polynomial", peak=5e-5, warmup=100, total=1000, end=0.0)
    assert abs(s(50) - 2.5e-5) < 1e-18
    assert s(100) == 5e-5


def test_schedule_rejects_total_below_warmup():
    with pytest.raises(ValueError):
        Schedule("polynomial", peak=1e-3, warmup=10, total=5)
