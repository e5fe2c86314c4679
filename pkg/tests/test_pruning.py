import numpy as np
import pytest
from hypothesis import given, strategies as st

from app.core.errors import ConfigError, NotOrthogonalError, OutOfRangeError
from app.schemas.grad import LossKind, LossSpec
from app.schemas.mixer import Variant
from app.schemas.plan import HeadCalibration, PruningPlan, SelectionMode, Strategy
from app.services.linalg import random_orthogonal, swap_gains
from app.services.mixers import layer_forward
from app.services.pruning import (
    adapt_conv_filters,
    apply_plan,
    calibration_matrix,
    collect_calibration,
    diagonal_adaptation_error,
    pca_transform,
    retained_width,
    score_grad,
    score_l1,
    score_swanda,
    select,
    select_drrqr,
    selection_matrix,
    shared_conv_commute_check,
    top_k_indices,
)


@pytest.mark.parametrize("key_dim, ratio, expected", [
    (16, 0.5, 8),
    (16, 0.0, 16),
    (16, 0.75, 4),
    (3, 0.5, 1),
    (1, 0.9, 1),
    (10, 0.25, 7),
])
def test_retained_width(key_dim, ratio, expected):
    assert retained_width(key_dim, ratio) == expected


@given(st.integers(min_value=1, max_value=64), st.floats(min_value=0.0, max_value=0.99))
def test_retained_width_is_in_range(key_dim, ratio):
    assert 1 <= retained_width(key_dim, ratio) <= key_dim


def test_retained_width_rejects_full_compression():
    with pytest.raises(OutOfRangeError):
        retained_width(8, 1.0)


def test_selection_matrix():
    p = selection_matrix([0, 2], 3)
    assert np.array_equal(p, [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def test_top_k_ties_favor_lowest_index():
    assert top_k_indices([1.0, 2.0, 2.0, 0.0], 2) == [1, 2]
    assert top_k_indices([1.0, 2.0, 2.0, 0.0], 1) == [1]
    assert top_k_indices([0.0, 0.0, 0.0], 2) == [0, 1]


def test_score_l1_modes():
    w_q = np.array([[1.0, -2.0], [0.0, 1.0]])
    w_k = np.array([[3.0, 0.0], [-1.0, 0.0]])
    assert score_l1(w_q, w_k).tolist() == [5.0, 3.0]
    assert score_l1(w_q, w_k, "queries").tolist() == [1.0, 3.0]
    assert score_l1(w_q, w_k, "keys").tolist() == [4.0, 0.0]


def test_score_swanda_weights_by_input_norms():
    w_q = np.array([[1.0, 0.0], [0.0, 1.0]])
    w_k = np.zeros((2, 2))
    assert score_swanda(w_q, w_k, [10.0, 1.0]).tolist() == [10.0, 1.0]


def test_score_grad_shapes(small_layer, rng):
    x = rng.standard_normal((5, 6))
    loss = LossSpec(kind=LossKind.SQUARED_ERROR, targets=np.zeros((5, 6)))
    scores = score_grad(small_layer, x, loss, Variant.DELTA)
    assert len(scores) == 2
    assert all(s.shape == (4,) and np.all(s >= 0.0) for s in scores)


def test_collect_calibration_subsamples(small_layer, rng):
    x = rng.standard_normal((4, 10, 6))
    stats = collect_calibration(small_layer, x, Variant.DELTA, max_samples=16)
    assert len(stats.heads) == 2
    assert stats.heads[0].captured_k.shape == (16, 4)
    assert stats.heads[0].input_column_norms.shape == (6,)
    assert calibration_matrix(stats.heads[0]).shape == (32, 4)
    assert calibration_matrix(stats.heads[0], "keys").shape == (16, 4)


def test_drrqr_avoids_duplicated_channels(rng):
    k = rng.standard_normal((40, 4))
    k[:, 1] = k[:, 0]
    stats = HeadCalibration(captured_k=k, captured_q=k.copy(), input_column_norms=np.ones(3))
    retained = select_drrqr(stats, 3, f=2.0)
    assert not {0, 1} <= set(retained)


def test_drrqr_plan_satisfies_swap_bound(small_layer, rng):
    x = rng.standard_normal((3, 12, 6))
    stats = collect_calibration(small_layer, x, Variant.DELTA)
    plan = select(Strategy.DRRQR, SelectionMode.JOINT, 0.5, small_layer, [stats], f=1.5)
    for head_plan, head_stats in zip(plan.layers[0].heads, stats.heads):
        assert head_plan.target_width == 2
        rho = swap_gains(calibration_matrix(head_stats), head_plan.retained)
        assert rho.max() <= 1.5 * (1 + 1e-9)


def test_zero_ratio_is_identity(small_layer, rng):
    plan = select(Strategy.L1, SelectionMode.JOINT, 0.0, small_layer)
    assert plan.is_identity()
    pruned = apply_plan(small_layer, plan)
    for before, after in zip(small_layer.heads, pruned.heads):
        assert np.array_equal(before.w_q, after.w_q)
        assert np.array_equal(before.conv_k, after.conv_k)
    x = rng.standard_normal((5, 6))
    assert np.array_equal(layer_forward(small_layer, x, "delta").outputs, layer_forward(pruned, x, "delta").outputs)


def test_apply_plan_trims_queries_keys_and_filters(small_layer):
    plan = select(Strategy.RAND, SelectionMode.JOINT, 0.5, small_layer, seed=3)
    pruned = apply_plan(small_layer, plan)
    for head, head_plan, original in zip(pruned.heads, plan.layers[0].heads, small_layer.heads):
        assert head.w_q.shape == (6, 2)
        assert head.conv_q.shape == (2, 3)
        assert np.array_equal(head.w_k, original.w_k[:, head_plan.retained])
        assert np.array_equal(head.w_v, original.w_v)
    assert np.array_equal(pruned.w_o, small_layer.w_o)


def test_rand_is_seeded(small_layer):
    first = select(Strategy.RAND, SelectionMode.JOINT, 0.5, small_layer, seed=1)
    again = select(Strategy.RAND, SelectionMode.JOINT, 0.5, small_layer, seed=1)
    assert first.model_dump() == again.model_dump()


def test_strategies_without_data_fail(small_layer):
    with pytest.raises(ConfigError):
        select(Strategy.DRRQR, SelectionMode.JOINT, 0.5, small_layer)
    with pytest.raises(ConfigError):
        select(Strategy.GRAD, SelectionMode.JOINT, 0.5, small_layer)


def test_plan_json_round_trip(small_layer, rng):
    stats = collect_calibration(small_layer, rng.standard_normal((2, 8, 6)), Variant.DELTA)
    plan = select(Strategy.PCA, SelectionMode.KEYS, 0.5, small_layer, [stats])
    assert not plan.hardware_aligned
    dumped = plan.model_dump(by_alias=True, mode="json")
    assert dumped["layers"][0]["heads"][0]["targetWidth"] == 2
    restored = PruningPlan.model_validate(dumped)
    assert restored.layers[0].heads[0].transform.t.shape == (2, 4)


def test_pca_transform_orders_variance(rng):
    k = rng.standard_normal((200, 3)) * np.array([5.0, 1.0, 0.1])
    stats = HeadCalibration(captured_k=k, captured_q=k, input_column_norms=np.ones(2))
    top = pca_transform(stats, 1, mode="keys")
    bottom = pca_transform(stats, 1, adversarial=True, mode="keys")
    assert abs(top.t[0, 0]) > 0.99
    assert abs(bottom.t[0, 2]) > 0.99
    assert top.explained_variance_ratio > bottom.explained_variance_ratio


def test_adapt_conv_filters_identity_and_permutation(rng):
    w = rng.standard_normal((3, 4))
    assert np.allclose(adapt_conv_filters(np.eye(3), w), w)
    perm = np.eye(3)[[2, 0, 1]]
    assert np.allclose(adapt_conv_filters(perm, w), w[[2, 0, 1]])


def test_adapt_conv_filters_rejects_non_orthogonal(rng):
    with pytest.raises(NotOrthogonalError):
        adapt_conv_filters(2.0 * np.eye(3), rng.standard_normal((3, 2)))


def test_diagonal_adaptation_is_optimal(rng):
    t = random_orthogonal(4, rng)
    w = rng.standard_normal((4, 3))
    best = adapt_conv_filters(t, w)
    error = diagonal_adaptation_error(t, w, best)
    for _ in range(20):
        assert error <= diagonal_adaptation_error(t, w, best + 0.05 * rng.standard_normal(best.shape))


def test_shared_conv_commutes_only_with_equal_rows(rng):
    t = random_orthogonal(3, rng)
    x = rng.standard_normal((6, 3))
    shared = np.tile(rng.standard_normal((1, 4)), (3, 1))
    assert shared_conv_commute_check(shared, t, x)
    assert not shared_conv_commute_check(rng.standard_normal((3, 4)), t, x)
