import numpy as np
import pytest

from app.core.errors import DegenerateInputError, NonFiniteError, ShapeMismatchError, ZeroMatrixError
from app.schemas.grad import AdamHyper, AdamState, LossKind, LossSpec, SgdHyper
from app.schemas.mixer import HeadDims, Variant
from app.services.grad_engine import (
    adam_step,
    finite_difference_grads,
    layer_backward,
    layer_forward_tape,
    layer_vjp,
    loss_value_and_grad,
    query_jacobian,
    query_jacobian_condition,
    scheduled_lr,
    sgd_step,
)
from app.services.linalg import condition_number
from app.services.mixers import init_layer_params, layer_forward


@pytest.fixture
def tiny_layer():
    dims = HeadDims(model_dim=3, key_dim=2, value_dim=2, num_heads=1, conv_len=2)
    return init_layer_params(dims, np.random.default_rng(3))


def _loss_fn(layer, x, loss, variant):
    def fn(values):
        updated = layer.with_parameters(values)
        outputs = layer_forward(updated, x, variant).outputs
        return loss_value_and_grad(outputs, loss)[0]
    return fn


@pytest.mark.parametrize("variant", list(Variant))
def test_layer_backward_matches_finite_differences(tiny_layer, variant):
    rng = np.random.default_rng(11)
    x = rng.standard_normal((4, 3))
    loss = LossSpec(kind=LossKind.SQUARED_ERROR, targets=rng.standard_normal((4, 3)))
    _, grads = layer_backward(tiny_layer, x, loss, variant)
    numeric = finite_difference_grads(_loss_fn(tiny_layer, x, loss, variant), tiny_layer.named_parameters())
    for name, expected in numeric.items():
        assert np.allclose(grads[name], expected, rtol=1e-5, atol=1e-7), name


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences_across_seeds(variant, seed):
    dims = HeadDims(model_dim=6, key_dim=4, value_dim=4, num_heads=1, conv_len=2)
    rng = np.random.default_rng(seed)
    layer = init_layer_params(dims, rng)
    x = rng.standard_normal((4, 6))
    loss = LossSpec(kind=LossKind.SQUARED_ERROR, targets=rng.standard_normal((4, 6)))
    _, grads = layer_backward(layer, x, loss, variant)
    numeric = finite_difference_grads(_loss_fn(layer, x, loss, variant), layer.named_parameters())
    for name, expected in numeric.items():
        error = np.linalg.norm(grads[name] - expected)
        assert error <= 1e-5 * max(np.linalg.norm(expected), 1e-2), name


def test_backward_is_bitwise_deterministic(small_layer, rng):
    x = rng.standard_normal((2, 5, 6))
    loss = LossSpec(kind=LossKind.SQUARED_ERROR, targets=rng.standard_normal((2, 5, 6)))
    first_loss, first = layer_backward(small_layer, x, loss, Variant.GATED)
    second_loss, second = layer_backward(small_layer, x, loss, Variant.GATED)
    assert first_loss == second_loss
    assert all(np.array_equal(first[name], second[name]) for name in small_layer.named_parameters())


def test_cross_entropy_gradient_matches_finite_differences(tiny_layer):
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 3))
    targets = np.zeros((3, 3))
    targets[2, 1] = 1.0
    loss = LossSpec(kind=LossKind.CROSS_ENTROPY, targets=targets)
    _, grads = layer_backward(tiny_layer, x, loss, Variant.DELTA)
    numeric = finite_difference_grads(_loss_fn(tiny_layer, x, loss, Variant.DELTA), tiny_layer.named_parameters())
    for name, expected in numeric.items():
        assert np.allclose(grads[name], expected, rtol=1e-5, atol=1e-7), name


def test_unused_gates_have_zero_gradient(tiny_layer):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 3))
    loss = LossSpec(kind=LossKind.SQUARED_ERROR, targets=np.zeros((4, 3)))
    _, linear = layer_backward(tiny_layer, x, loss, Variant.LINEAR)
    _, delta = layer_backward(tiny_layer, x, loss, Variant.DELTA)
    assert not np.any(linear["heads.0.w_beta"])
    assert not np.any(delta["heads.0.w_alpha"])


def test_input_gradient_matches_finite_differences(tiny_layer):
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 3))
    targets = rng.standard_normal((3, 3))
    trace = layer_forward_tape(tiny_layer, x, Variant.GATED)
    grad_x, _ = layer_vjp(tiny_layer, trace, trace.y - targets)

    def fn(values):
        outputs = layer_forward(tiny_layer, values["x"], Variant.GATED).outputs
        return 0.5 * float(np.sum((outputs - targets) ** 2))

    numeric = finite_difference_grads(fn, {"x": x})["x"]
    assert np.allclose(grad_x, numeric, rtol=1e-5, atol=1e-7)


def test_gradient_keys_follow_named_parameters(small_layer, rng):
    x = rng.standard_normal((2, 5, 6))
    loss = LossSpec(kind=LossKind.SQUARED_ERROR, targets=np.zeros((2, 5, 6)))
    _, grads = layer_backward(small_layer, x, loss)
    params = small_layer.named_parameters()
    assert set(grads) == set(params)
    assert all(grads[name].shape == value.shape for name, value in params.items())


def test_loss_shape_mismatch():
    loss = LossSpec(kind=LossKind.SQUARED_ERROR, targets=np.zeros((2, 2)))
    with pytest.raises(ShapeMismatchError):
        loss_value_and_grad(np.zeros((3, 2)), loss)


def test_non_finite_loss():
    loss = LossSpec(kind=LossKind.SQUARED_ERROR, targets=np.zeros((1, 1)))
    with pytest.raises(NonFiniteError):
        loss_value_and_grad(np.array([[1e200]]), loss)


def test_cross_entropy_with_all_rows_masked():
    loss = LossSpec(kind=LossKind.CROSS_ENTROPY, targets=np.zeros((2, 3)))
    value, grad = loss_value_and_grad(np.ones((2, 3)), loss)
    assert value == 0.0
    assert not np.any(grad)


def test_query_jacobian_condition_equals_kappa(rng):
    s = rng.standard_normal((4, 4))
    x = rng.standard_normal(3)
    assert query_jacobian_condition(s, x) == pytest.approx(condition_number(s), rel=1e-8)
    assert query_jacobian(s, x).shape == (4, 12)


def test_query_jacobian_condition_degenerate_inputs(rng):
    with pytest.raises(ZeroMatrixError):
        query_jacobian_condition(np.zeros((2, 2)), [1.0, 2.0])
    with pytest.raises(DegenerateInputError):
        query_jacobian_condition(rng.standard_normal((2, 2)), [0.0, 0.0])


def test_sgd_step_moves_against_gradient():
    params = {"w": np.array([1.0, -2.0])}
    updated = sgd_step(params, {"w": np.array([0.5, -0.5])}, SgdHyper(lr=0.1))
    assert np.allclose(updated["w"], [0.95, -1.95])


def test_adam_first_step_has_lr_magnitude():
    params = {"w": np.array([1.0, 1.0])}
    updated, state = adam_step(params, {"w": np.array([3.0, -0.2])}, AdamHyper(lr=0.01), AdamState())
    assert state.step == 1
    assert np.allclose(updated["w"], [0.99, 1.01], atol=1e-6)


def test_adam_on_layer_params_reduces_loss(tiny_layer):
    rng = np.random.default_rng(9)
    x = rng.standard_normal((4, 3))
    loss = LossSpec(kind=LossKind.SQUARED_ERROR, targets=rng.standard_normal((4, 3)))
    first, _ = layer_backward(tiny_layer, x, loss)
    layer, state = tiny_layer, AdamState()
    for _ in range(50):
        _, grads = layer_backward(layer, x, loss)
        layer, state = adam_step(layer, grads, AdamHyper(lr=0.02), state)
    last, _ = layer_backward(layer, x, loss)
    assert last < first


def test_adam_minimizes_quadratic_bowl():
    center = np.array([1.5, -0.5, 2.0, 0.25])
    params, state = {"p": np.zeros(4)}, AdamState()
    steps = 0
    while 0.5 * float(np.sum((params["p"] - center) ** 2)) >= 1e-6 and steps < 2000:
        params, state = adam_step(params, {"p": params["p"] - center}, AdamHyper(lr=0.05), state)
        steps += 1
    assert 0.5 * float(np.sum((params["p"] - center) ** 2)) < 1e-6
    assert steps <= 2000


def test_scheduled_lr_warmup_and_cosine_decay():
    assert scheduled_lr(0.01, 0, 1000, warmup_steps=100) == pytest.approx(1e-4)
    assert scheduled_lr(0.01, 99, 1000, warmup_steps=100) == pytest.approx(0.01)
    assert scheduled_lr(0.01, 100, 1000, warmup_steps=100) == pytest.approx(0.01)
    assert scheduled_lr(0.01, 999, 1000, warmup_steps=100, min_ratio=0.02) == pytest.approx(2e-4)
    rates = [scheduled_lr(0.01, step, 1000, warmup_steps=100) for step in range(100, 1000)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_scheduled_lr_caps_warmup_and_allows_none():
    assert scheduled_lr(0.01, 4, 50, warmup_steps=100) == pytest.approx(0.01)
    assert scheduled_lr(0.01, 0, 50) == pytest.approx(0.01)
