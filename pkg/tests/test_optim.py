import numpy as np
import pytest

from src.autodiff import Parameter
from src.optim import (
    AdamW,
    NonFiniteLossError,
    ParamGroup,
    ParameterMismatchError,
    check_finite,
    ema_blend,
)


def _opt(params, lr=1e-3, wd=0.0, slot="test"):
    return AdamW([ParamGroup(params, lr)], slot=slot, weight_decay=wd)


def test_zero_grad_without_decay_leaves_params(f64):
    p = Parameter("p", np.array([1.5, -2.0]))
    p.grad = np.zeros(2)
    _opt([p]).step()
    np.testing.assert_array_equal(p.data, [1.5, -2.0])
    assert p.state["test"]["step"] == 1


def test_first_step_moves_against_gradient_sign(f64):
    p = Parameter("p", np.array([0.0, 0.0]))
    p.grad = np.array([0.3, -7.0])
    _opt([p], lr=1e-3).step()
    np.testing.assert_allclose(p.data, [-1e-3, 1e-3], rtol=1e-6)


def test_decoupled_weight_decay_with_zero_grad(f64):
    p = Parameter("p", np.array([2.0]))
    p.grad = np.zeros(1)
    _opt([p], lr=0.1, wd=0.5).step()
    np.testing.assert_allclose(p.data, [2.0 * (1 - 0.1 * 0.5)])


def test_params_without_grad_are_skipped(f64):
    p = Parameter("p", np.array([1.0]))
    _opt([p], wd=0.5).step()
    np.testing.assert_array_equal(p.data, [1.0])
    assert p.state["test"]["step"] == 0


def test_slots_keep_independent_moments(f64):
    p = Parameter("p", np.array([0.0]))
    a, b = _opt([p], slot="a"), _opt([p], slot="b")
    p.grad = np.array([1.0])
    a.step()
    a.step()
    b.step()
    assert p.state["a"]["step"] == 2
    assert p.state["b"]["step"] == 1


def test_zero_grad_clears():
    p = Parameter("p", np.array([1.0]))
    p.grad = np.array([3.0])
    opt = _opt([p])
    opt.zero_grad()
    assert p.grad is None


def test_ema_blend_arithmetic(f64):
    target = {"w": Parameter("t.w", np.array([0.0]))}
    online = {"w": Parameter("o.w", np.array([1.0]))}
    ema_blend(target, online, 0.005)
    assert target["w"].data[0] == pytest.approx(0.005)
    ema_blend(target, online, 0.0)
    assert target["w"].data[0] == pytest.approx(0.005)
    ema_blend(target, online, 1.0)
    assert target["w"].data[0] == 1.0


def test_ema_blend_converges_geometrically(f64):
    target = {"w": Parameter("t.w", np.array([10.0]))}
    online = {"w": Parameter("o.w", np.array([0.0]))}
    tau = 0.1
    gaps = []
    for _ in range(5):
        ema_blend(target, online, tau)
        gaps.append(abs(target["w"].data[0]))
    ratios = np.array(gaps[1:]) / np.array(gaps[:-1])
    np.testing.assert_allclose(ratios, 1 - tau, rtol=1e-12)


def test_ema_blend_name_mismatch():
    with pytest.raises(ParameterMismatchError):
        ema_blend({"a": Parameter("a", np.zeros(1))}, {"b": Parameter("b", np.zeros(1))}, 0.5)


def test_check_finite():
    assert check_finite("loss", np.array(2.5)) == 2.5
    with pytest.raises(NonFiniteLossError, match="critic_loss"):
        check_finite("critic_loss", np.array([np.nan]))
