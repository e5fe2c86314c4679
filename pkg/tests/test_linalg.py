import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from app.core.errors import OutOfRangeError, RankDeficientError, ShapeMismatchError, ZeroMatrixError
from app.services.linalg import (
    condition_number,
    matmul,
    numeric_rank,
    qrcp,
    random_orthogonal,
    srrqr,
    srrqr_select,
    svd_jacobi,
    svd_values,
    swap_gains,
)


def test_matmul_matches_numpy(rng):
    a = rng.standard_normal((4, 5))
    b = rng.standard_normal((5, 3))
    assert np.allclose(matmul(a, b), a @ b, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_qrcp_reconstructs_permuted_matrix(rng):
    m = rng.standard_normal((6, 4))
    result = qrcp(m)
    assert np.allclose(result.q @ result.r, m[:, result.perm], atol=1e-12)
    assert np.allclose(result.q.T @ result.q, np.eye(4), atol=1e-12)
    diag = np.abs(np.diag(result.r))
    assert np.all(np.diff(diag) <= 1e-12)
    assert np.all(np.diag(result.r) >= 0.0)


def test_qrcp_rank_deficient_has_trailing_zero():
    m = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [1.0, 0.0, 1.0]])
    m[:, 2] = m[:, 0] + m[:, 1]
    result = qrcp(m)
    assert abs(result.r[2, 2]) < 1e-12


def test_qrcp_ties_pick_lowest_index():
    result = qrcp(np.eye(3))
    assert result.perm == [0, 1, 2]


def test_svd_jacobi_matches_numpy(rng):
    m = rng.standard_normal((5, 3))
    u, s, vt = svd_jacobi(m)
    assert np.allclose(s, np.linalg.svd(m, compute_uv=False), atol=1e-12)
    assert np.allclose(u @ np.diag(s) @ vt, m, atol=1e-12)


def test_svd_jacobi_wide_matrix(rng):
    m = rng.standard_normal((2, 5))
    u, s, vt = svd_jacobi(m)
    assert s.shape == (2,)
    assert np.allclose(u @ np.diag(s) @ vt, m, atol=1e-12)


def test_svd_of_zero_matrix_is_zero():
    assert np.all(svd_values(np.zeros((3, 2))) == 0.0)


@hyp_settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=6), st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=10_000))
def test_svd_values_sorted_and_nonnegative(rows, cols, seed):
    m = np.random.default_rng(seed).standard_normal((rows, cols))
    s = svd_values(m)
    assert len(s) == min(rows, cols)
    assert np.all(s >= 0.0)
    assert np.all(np.diff(s) <= 1e-12)


def test_condition_number_of_orthogonal_is_one(rng):
    q = random_orthogonal(5, rng)
    assert condition_number(q) == pytest.approx(1.0, abs=1e-10)


def test_condition_number_singular_is_inf():
    assert condition_number(np.array([[1.0, 1.0], [1.0, 1.0]])) == float("inf")


def test_condition_number_zero_matrix():
    with pytest.raises(ZeroMatrixError):
        condition_number(np.zeros((2, 2)))


def test_numeric_rank():
    m = np.outer([1.0, 2.0, 3.0], [1.0, -1.0])
    assert numeric_rank(m) == 1
    assert numeric_rank(np.zeros((2, 2))) == 0


def test_srrqr_contract(rng):
    m = rng.standard_normal((10, 8))
    result = srrqr(m, 4, f=1.5)
    assert len(result.selected) == 4
    assert result.max_rho <= 1.5 * (1 + 1e-12)
    assert swap_gains(m, result.selected).max() <= 1.5 * (1 + 1e-9)
    # cada intercambio multiplica |det| por rho > f
    assert all(b > a for a, b in zip(result.log_abs_dets, result.log_abs_dets[1:]))
    assert len(result.log_abs_dets) == result.swaps + 1


def test_srrqr_prefers_independent_columns():
    m = np.array([
        [1.0, 1.0, 0.0, 0.0],
        [0.0, 1e-9, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    selected = set(srrqr_select(m, 3, f=1.5))
    assert selected == {0, 2, 3} or selected == {1, 2, 3}


def test_srrqr_out_of_range():
    m = np.eye(4)
    with pytest.raises(OutOfRangeError):
        srrqr(m, 4)
    with pytest.raises(OutOfRangeError):
        srrqr(m, 0)
    with pytest.raises(OutOfRangeError):
        srrqr(m, 2, f=0.5)


def test_srrqr_rank_deficient():
    m = np.outer(np.ones(4), np.arange(1.0, 6.0))
    with pytest.raises(RankDeficientError):
        srrqr(m, 2)


def test_swap_gains_independent_of_order(rng):
    m = rng.standard_normal((6, 6))
    assert np.allclose(swap_gains(m, [0, 3, 4]).max(), swap_gains(m, [4, 0, 3]).max(), atol=1e-12)


def test_random_orthogonal_is_orthogonal(rng):
    q = random_orthogonal(6, rng)
    assert np.allclose(q.T @ q, np.eye(6), atol=1e-12)


def test_srrqr_keeps_one_of_duplicate_columns():
    m = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    selected = srrqr_select(m, 2)
    assert 2 in selected
    assert len({0, 1} & set(selected)) == 1
