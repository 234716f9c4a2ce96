import numpy as np
import pytest

from src.autodiff import ShapeError, Tensor, backward, no_grad
from src.layers import Mlp, MlpSpec, init_mlp_params, layer_norm, mish, orthogonal_init
from tests.helpers import numeric_grad, rel_err


def _np_mish(x):
    return x * np.tanh(np.log1p(np.exp(x)))


def test_mish_values(f64):
    out = mish(Tensor(np.array([0.0, -50.0, 1.0]))).data
    assert out[0] == 0.0
    assert abs(out[1]) < 1e-12
    assert out[2] == pytest.approx(1.0 * np.tanh(np.log(1.0 + np.e)), rel=1e-12)


def test_layer_norm_constant_row_is_zero(f64):
    x = Tensor(np.full((2, 5), 3.7))
    out = layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_layer_norm_zero_gain_gives_bias(f64, rng):
    bias = rng.normal(size=4)
    out = layer_norm(Tensor(rng.normal(size=(3, 4))), Tensor(np.zeros(4)), Tensor(bias))
    np.testing.assert_allclose(out.data, np.broadcast_to(bias, (3, 4)), atol=1e-12)


def test_layer_norm_moments(f64, rng):
    x = Tensor(rng.normal(loc=2.0, scale=3.0, size=(4, 64)))
    out = layer_norm(x, Tensor(np.ones(64)), Tensor(np.zeros(64)), eps=1e-12).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-6)


def test_layer_norm_width_mismatch():
    with pytest.raises(ShapeError):
        layer_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(4)), Tensor(np.zeros(4)))


@pytest.mark.parametrize("shape", [(6, 6), (3, 7), (7, 3)])
def test_orthogonal_init(shape, rng):
    w = orthogonal_init(shape, rng)
    assert w.shape == shape
    m, n = shape
    gram = w @ w.T if m < n else w.T @ w
    np.testing.assert_allclose(gram, np.eye(min(m, n)), atol=1e-6)
    np.testing.assert_allclose(np.linalg.svd(w, compute_uv=False), 1.0, atol=1e-6)
    assert np.linalg.matrix_rank(w) == min(m, n)


def test_zero_weights_give_zero_output(f64, rng):
    net = Mlp(MlpSpec(3, (8, 8), 2), rng).zero_()
    out = net(rng.normal(size=(5, 3)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_normed_layer_on_constant_preactivation(f64, rng):
    spec = MlpSpec(3, (4,), 2)
    values = init_mlp_params(spec, rng)
    values["0.weight"] = np.zeros((3, 4))
    values["0.bias"] = np.full(4, 0.7)
    values["0.ln_bias"] = rng.normal(size=4)
    net = Mlp(spec, values=values)
    out = net(rng.normal(size=(2, 3))).data
    hidden = _np_mish(values["0.ln_bias"])
    expected = hidden @ values["1.weight"] + values["1.bias"]
    np.testing.assert_allclose(out, np.broadcast_to(expected, (2, 2)), atol=1e-9)


def test_forward_matches_direct_arithmetic(f64, rng):
    spec = MlpSpec(4, (6,), 3)
    values = init_mlp_params(spec, rng)
    values["0.ln_gain"] = rng.uniform(0.5, 1.5, size=6)
    values["0.ln_bias"] = rng.normal(size=6)
    x = rng.normal(size=(5, 4))

    h = x @ values["0.weight"] + values["0.bias"]
    mu = h.mean(axis=-1, keepdims=True)
    var = ((h - mu) ** 2).mean(axis=-1, keepdims=True)
    h = (h - mu) / np.sqrt(var + 1e-5) * values["0.ln_gain"] + values["0.ln_bias"]
    h = _np_mish(h)
    expected = h @ values["1.weight"] + values["1.bias"]

    np.testing.assert_allclose(Mlp(spec, values=values)(x).data, expected, rtol=1e-10, atol=1e-12)


def test_forward_is_deterministic(rng):
    net = Mlp(MlpSpec(4, (8,), 2), rng)
    x = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(net(x).data, net(x).data)


def test_shape_error_names_the_layer(rng):
    net = Mlp(MlpSpec(4, (8,), 2, name="encoder"), rng)
    with pytest.raises(ShapeError, match="encoder.0"):
        net(np.ones((3, 5)))


def test_mlp_parameter_grads_match_finite_differences(f64, rng):
    net = Mlp(MlpSpec(3, (5, 4), 2, orthogonal=True), rng)
    x = rng.normal(size=(6, 3))
    target = rng.normal(size=(6, 2))

    def loss():
        err = net(x) - target
        return (err * err).mean()

    backward(loss())
    with no_grad():
        for name, p in net.params.items():
            assert rel_err(p.grad, numeric_grad(lambda: loss().item(), p.data)) < 1e-5, name


def test_frozen_forward_gives_no_parameter_grads(rng):
    net = Mlp(MlpSpec(3, (4,), 1), rng)
    x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    backward(net(x, frozen=True).sum())
    assert x.grad is not None
    assert all(p.grad is None for p in net.parameters())


def test_clone_is_exact_and_renamed(rng):
    net = Mlp(MlpSpec(3, (4,), 2, name="critic1"), rng)
    copy = net.clone("critic1_target")
    assert set(copy.params) == set(net.params)
    assert all(p.name.startswith("critic1_target.") for p in copy.parameters())
    for key in net.params:
        np.testing.assert_array_equal(copy.params[key].data, net.params[key].data)
        assert copy.params[key].data is not net.params[key].data
