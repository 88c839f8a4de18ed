import numpy as np
import pytest

from fwm.diffcore import (MLP, BatchNorm, ComputationSpec, Conv2d, LayerNorm, Linear,
                          NonFiniteGradientError, ParamSet, ShapeError, Tensor, adam_step,
                          grad_check)
from fwm.diffcore import ops


def reference_conv2d(x, w, b, stride, padding):
    """Scalar loop convolution used as an independent oracle."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    out = np.zeros((n, o, oh, ow))
    for ni in range(n):
        for oi in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = b[oi]
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[ni, ci, i * stride + u, j * stride + v] * w[oi, ci, u, v]
                    out[ni, oi, i, j] = acc
    return out


def test_linear_identity():
    x = Tensor(np.array([[1.0, -2.0, 3.0]], np.float32))
    out = ops.linear(x, Tensor(np.eye(3, dtype=np.float32)), Tensor(np.zeros(3, np.float32)))
    np.testing.assert_array_equal(out.data, x.data)


def test_relu_definition():
    out = ops.relu(Tensor(np.array([-1.0, 0.0, 2.0], np.float32)))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_conv_output_size_matches_reference():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 18, 18))
    w = rng.standard_normal((4, 3, 5, 5))
    b = rng.standard_normal(4)
    out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
    assert out.shape == (2, 4, 8, 8)
    assert (18 + 2 * 1 - 5) // 2 + 1 == 8
    np.testing.assert_allclose(out.data, reference_conv2d(x, w, b, 2, 1), rtol=1e-10, atol=1e-10)


def test_shape_mismatch_names_node():
    rng = np.random.default_rng(0)
    conv = Conv2d(14, 32, 5, 2, 1, rng, name="encoder.conv1")
    with pytest.raises(ShapeError, match="encoder.conv1"):
        conv(Tensor(np.zeros((1, 11, 18, 18), np.float32)))
    lin = Linear(4, 2, rng, name="probe.0")
    with pytest.raises(ShapeError, match="probe.0"):
        lin(Tensor(np.zeros((3, 5), np.float32)))


def _mlp_graph(rng, sizes=(6, 16, 16, 3)):
    mlp = MLP(list(sizes), rng)
    params = mlp.named_parameters()
    return ComputationSpec(lambda inp: mlp(inp["x"]), params, (mlp,)), mlp


def test_backward_before_forward_is_error():
    graph, _ = _mlp_graph(np.random.default_rng(0))
    with pytest.raises(RuntimeError):
        graph.backward(np.ones((1, 3)))


def test_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(1)
    graph, _ = _mlp_graph(rng)
    graph.forward({"x": rng.standard_normal((5, 6))})
    grads = graph.backward(np.zeros((5, 3)))
    for g in list(grads.params.values()) + list(grads.inputs.values()):
        assert not np.any(g)


def test_sum_node_broadcasts_gradient():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([3.0, 4.0]), requires_grad=True)
    (a + b).backward(np.array([0.5, -1.5]))
    np.testing.assert_array_equal(a.grad, [0.5, -1.5])
    np.testing.assert_array_equal(b.grad, [0.5, -1.5])


def test_mlp_gradcheck_h1e3():
    graph, _ = _mlp_graph(np.random.default_rng(2))
    x = np.random.default_rng(3).standard_normal((4, 6))
    assert grad_check(graph, {"x": x}, h=1e-3, n_samples=200, check_inputs=True) < 1e-3


def test_gradcheck_pure_linear():
    rng = np.random.default_rng(4)
    lin = Linear(5, 3, rng)
    graph = ComputationSpec(lambda inp: lin(inp["x"]), lin.named_parameters())
    assert grad_check(graph, {"x": rng.standard_normal((7, 5))}, h=1e-3, n_samples=30,
                      check_inputs=True) < 1e-6


def test_gradcheck_relu_away_from_kinks():
    h = 1e-3
    rng = np.random.default_rng(5)
    x = rng.uniform(0.05, 1.0, size=(4, 8)) * rng.choice([-1, 1], size=(4, 8))
    assert np.all(np.abs(x) > 10 * h)
    graph = ComputationSpec(lambda inp: ops.relu(inp["x"]) * 1.0, {})
    assert grad_check(graph, {"x": x}, h=h, n_samples=32, check_inputs=True) < 1e-4


PRIMITIVES = {
    "conv2d": lambda rng: _wrap_conv(rng),
    "batch_norm_train": lambda rng: _wrap_bn(rng, True),
    "batch_norm_eval": lambda rng: _wrap_bn(rng, False),
    "layer_norm": lambda rng: _wrap_ln(rng),
}


def _wrap_conv(rng):
    conv = Conv2d(3, 4, 5, 2, 1, rng)
    return (ComputationSpec(lambda inp: conv(inp["x"]), conv.named_parameters()),
            {"x": rng.standard_normal((2, 3, 9, 9))})


def _wrap_bn(rng, training):
    bn = BatchNorm(3)
    bn.running_mean[:] = rng.standard_normal(3)
    bn.running_var[:] = rng.uniform(0.5, 2.0, 3)
    bn.gamma.data = rng.standard_normal(3)
    bn.train(training)
    return (ComputationSpec(lambda inp: bn(inp["x"]), bn.named_parameters(), (bn,)),
            {"x": rng.standard_normal((4, 3, 2, 2))})


def _wrap_ln(rng):
    ln = LayerNorm(6)
    ln.gamma.data = rng.standard_normal(6)
    return (ComputationSpec(lambda inp: ln(inp["x"]), ln.named_parameters()),
            {"x": rng.standard_normal((5, 6))})


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_layer_primitives_gradcheck(name):
    graph, inputs = PRIMITIVES[name](np.random.default_rng(6))
    assert grad_check(graph, inputs, h=1e-4, n_samples=40, check_inputs=True) < 1e-4


@pytest.mark.parametrize("fn", [
    lambda x: ops.sigmoid(x),
    lambda x: ops.leaky_relu(x, 0.1),
    lambda x: ops.concat([x, x * 2.0], axis=1),
    lambda x: ops.gather(x, np.array([2, 0, 0, 1]), axis=1),
    lambda x: ops.segment_sum(x, np.array([[1, 0, 1], [0, 1, 1]]), axis=1),
    lambda x: ops.global_avg_pool2d(x.reshape(2, 1, 3, 1)),
    lambda x: ops.binary_cross_entropy_with_logits(x, np.array([[0, 1, 1]] * 4)[:2, :3]),
    lambda x: x[:, 1:] * x[:, :2],
    lambda x: x.sum(axis=0).square(),
    lambda x: x.transpose() @ x,
])
def test_functional_primitives_gradcheck(fn):
    rng = np.random.default_rng(7)
    x = rng.uniform(0.1, 1.0, size=(2, 3)) * rng.choice([-1, 1], size=(2, 3))
    graph = ComputationSpec(lambda inp: fn(inp["x"]), {})
    assert grad_check(graph, {"x": x}, h=1e-5, n_samples=12, check_inputs=True) < 1e-5


def test_batchnorm_inference_is_affine():
    rng = np.random.default_rng(8)
    bn = BatchNorm(2).eval()
    bn.running_mean[:] = [0.5, -1.0]
    bn.running_var[:] = [4.0, 0.25]
    x = rng.standard_normal((3, 2, 2, 2)).astype(np.float32)
    y1 = bn(Tensor(x)).data
    y2 = bn(Tensor(x)).data
    np.testing.assert_array_equal(y1, y2)
    # affine: f(x1 + x2) - f(x2) == f(x1) - f(0)
    z = np.zeros_like(x)
    lhs = bn(Tensor(x + x)).data - bn(Tensor(x)).data
    rhs = bn(Tensor(x)).data - bn(Tensor(z)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)


def _pset(rng):
    lin = Linear(3, 2, rng)
    return lin, ParamSet(lin.named_parameters())


def test_adam_zero_gradient_is_noop():
    lin, ps = _pset(np.random.default_rng(9))
    before = {k: p.data.copy() for k, p in ps.params.items()}
    adam_step(ps, {k: np.zeros_like(p.data) for k, p in ps.params.items()}, lr=1e-3)
    for k, p in ps.params.items():
        np.testing.assert_array_equal(p.data, before[k])
    assert ps.step == 1


def test_adam_first_step_is_signed_lr():
    lin, ps = _pset(np.random.default_rng(10))
    before = {k: p.data.copy() for k, p in ps.params.items()}
    rng = np.random.default_rng(11)
    grads = {k: rng.standard_normal(p.shape).astype(np.float32) for k, p in ps.params.items()}
    lr = 5e-5
    adam_step(ps, grads, lr=lr)
    for k, p in ps.params.items():
        delta = p.data - before[k]
        # float32 ulp at |param| ~ 1 is ~6e-8, i.e. ~1e-3 of lr
        np.testing.assert_allclose(delta, -lr * np.sign(grads[k]), rtol=5e-3)


def test_adam_rejects_non_finite():
    lin, ps = _pset(np.random.default_rng(12))
    before = {k: p.data.copy() for k, p in ps.params.items()}
    grads = {k: np.ones_like(p.data) for k, p in ps.params.items()}
    grads["bias"][0] = np.nan
    with pytest.raises(NonFiniteGradientError):
        adam_step(ps, grads, lr=1e-3)
    assert ps.step == 0
    for k, p in ps.params.items():
        np.testing.assert_array_equal(p.data, before[k])


def _train_run(seed):
    rng = np.random.default_rng(seed)
    mlp = MLP([4, 8, 2], rng)
    ps = ParamSet(mlp.named_parameters())
    data = np.random.default_rng(seed + 1).standard_normal((16, 4)).astype(np.float32)
    for _ in range(100):
        ps.zero_grad()
        loss = ops.mse(mlp(Tensor(data)), np.zeros((16, 2)))
        loss.backward()
        adam_step(ps, ps.grads(), lr=1e-2)
    return {k: p.data.copy() for k, p in ps.params.items()}


def test_adam_deterministic_runs():
    a, b = _train_run(3), _train_run(3)
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()
