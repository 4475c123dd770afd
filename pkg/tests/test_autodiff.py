import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pcc import autodiff as ad
from pcc.autodiff import Tensor
from pcc.errors import ConfigError, ContractError, DimensionError
from pcc.gradcheck import check_gradients


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


finite = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False)


# ---------------------------------------------------------------- matmul

def test_matmul_identity():
    x = np.array([[1.5, -2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(Tensor(np.eye(2)), Tensor(x)).data, x)


def test_matmul_hand_sum():
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_grad_of_sum_is_ones_times_bT():
    rng = np.random.default_rng(0)
    with ad.precision(np.float64):
        a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
        ad.matmul(a, b).sum().backward()
    np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T, rtol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_matmul_finite_differences():
    rng = np.random.default_rng(1)
    with ad.precision(np.float64):
        a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
        w = rng.normal(size=(3, 2))
        err, n, _ = check_gradients(lambda: (ad.matmul(a, b) * Tensor(w)).sum(), [a, b], rng)
    assert n > 0 and err < 1e-4


# ---------------------------------------------------------------- softmax

def test_softmax_uniform_row():
    np.testing.assert_allclose(ad.softmax_rows(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], atol=1e-7)


def test_softmax_large_logits_no_overflow():
    out = ad.softmax_rows(Tensor(np.array([[1000.0, 0.0]]))).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-7)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 7)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    s = ad.softmax_rows(Tensor(x)).data
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)


def test_softmax_jvp_finite_differences():
    rng = np.random.default_rng(2)
    with ad.precision(np.float64):
        x = leaf(rng.normal(size=(4, 5)))
        w = rng.normal(size=(4, 5))
        err, _, _ = check_gradients(lambda: (ad.softmax_rows(x) * Tensor(w)).sum(), [x], rng)
    assert err < 1e-4


def test_log_softmax_matches_log_of_softmax():
    x = np.random.default_rng(3).normal(size=(3, 6)) * 10
    np.testing.assert_allclose(ad.log_softmax_rows(Tensor(x)).data,
                               np.log(ad.softmax_rows(Tensor(x)).data), rtol=1e-5, atol=1e-5)


# ---------------------------------------------------------------- group norm

def _gn(x, groups=4, scale=1.0, shift=0.0):
    c = x.shape[1]
    return ad.group_norm(Tensor(x), groups, Tensor(np.full(c, scale)), Tensor(np.full(c, shift)))


def test_group_norm_constant_input_is_zero():
    assert np.allclose(_gn(np.full((3, 8), 2.5)).data, 0.0)


def test_group_norm_zero_scale_gives_shift():
    x = np.random.default_rng(4).normal(size=(5, 8))
    assert np.allclose(_gn(x, scale=0.0, shift=1.25).data, 1.25)


def test_group_norm_statistics():
    x = np.random.default_rng(5).normal(size=(8, 16)) * 3 + 2
    with ad.precision(np.float64):
        y = _gn(x).data.reshape(8, 4, 4)
    assert np.abs(y.mean(axis=2)).max() < 1e-5
    assert np.abs(y.var(axis=2) - 1.0).max() < 1e-3


def test_group_norm_indivisible_channels():
    with pytest.raises(ConfigError):
        _gn(np.ones((2, 6)), groups=4)


def test_group_norm_finite_differences():
    rng = np.random.default_rng(6)
    with ad.precision(np.float64):
        x, s, b = leaf(rng.normal(size=(4, 16))), leaf(rng.normal(size=16)), leaf(rng.normal(size=16))
        w = rng.normal(size=(4, 16))
        err, _, _ = check_gradients(lambda: (ad.group_norm(x, 4, s, b) * Tensor(w)).sum(), [x, s, b], rng)
    assert err < 1e-4


# ---------------------------------------------------------------- leaky relu

def test_leaky_relu_values_and_slope_gradient():
    x = leaf([2.0, -1.0, -3.0])
    y = ad.leaky_relu(x, 0.2)
    np.testing.assert_allclose(y.data, [2.0, -0.2, -0.6])
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [1.0, 0.2, 0.2])


# ---------------------------------------------------------------- max over neighbours

def test_max_over_neighbors_k1_identity():
    x = np.random.default_rng(7).normal(size=(4, 1, 3)).astype(np.float32)
    assert np.array_equal(ad.max_over_neighbors(Tensor(x)).data, x[:, 0, :])


def test_max_over_neighbors_routes_grad_to_argmax():
    x = leaf(np.array([1.0, 5.0, 3.0]).reshape(1, 3, 1))
    y = ad.max_over_neighbors(x)
    assert y.data.item() == 5.0
    y.sum().backward()
    assert np.array_equal(x.grad.reshape(-1), [0.0, 1.0, 0.0])


def test_max_over_neighbors_matches_scan():
    x = np.random.default_rng(8).normal(size=(6, 4, 8)).astype(np.float32)
    oracle = np.empty((6, 8), dtype=np.float32)
    for n in range(6):
        for c in range(8):
            best = x[n, 0, c]
            for k in range(1, 4):
                best = max(best, x[n, k, c])
            oracle[n, c] = best
    assert np.array_equal(ad.max_over_neighbors(Tensor(x)).data, oracle)


def test_max_over_empty_neighbourhood():
    with pytest.raises(ContractError):
        ad.max_over_neighbors(Tensor(np.zeros((3, 0, 2))))


# ---------------------------------------------------------------- concat

def test_concat_single_part_identity():
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(ad.concat([Tensor(x)], axis=1).data, x)


def test_concat_widths_and_grad_split():
    a, b = leaf(np.ones((4, 2))), leaf(np.ones((4, 3)))
    y = ad.concat([a, b], axis=1)
    assert y.shape == (4, 5)
    y.sum().backward()
    assert np.array_equal(a.grad, np.ones((4, 2))) and np.array_equal(b.grad, np.ones((4, 3)))


def test_concat_mismatch():
    with pytest.raises(DimensionError):
        ad.concat([Tensor(np.ones((4, 2))), Tensor(np.ones((3, 2)))], axis=1)


# ---------------------------------------------------------------- backward

def test_backward_sum_gives_ones():
    x = leaf(np.random.default_rng(9).normal(size=(3, 2)))
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((3, 2)))


def test_backward_square_gives_2x():
    x = leaf(np.random.default_rng(10).normal(size=(3, 2)))
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_requires_scalar():
    with pytest.raises(ContractError):
        (leaf(np.ones(3)) * 2.0).backward()


def test_grad_accumulates_over_shared_subgraph():
    x = leaf([1.0, 2.0])
    y = x * 3.0
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, [6.0, 6.0])


def test_backward_is_deterministic():
    rng = np.random.default_rng(11)
    xv = rng.normal(size=(6, 5))
    grads = []
    for _ in range(2):
        x = leaf(xv)
        y = ad.softmax_rows(ad.matmul(x, Tensor(xv.T)))
        ad.group_norm(y, 2, Tensor(np.ones(6)), Tensor(np.zeros(6))).sum().backward()
        grads.append(x.grad.copy())
    assert np.array_equal(grads[0], grads[1])


def test_deep_chain_has_no_recursion_limit():
    x = leaf([1.0])
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.sum().backward()
    assert x.grad[0] == 1.0


def test_every_reachable_leaf_gets_grad():
    a, b, c = leaf(np.ones(2)), leaf(np.ones(2)), leaf(np.ones(2))
    ((a * b) + c).sum().backward()
    for t in (a, b, c):
        assert t.grad is not None and t.grad.shape == t.shape


def test_broadcast_gradient_reduces_to_operand_shape():
    a, b = leaf(np.ones((3, 4))), leaf(np.ones(4))
    (a * b).sum().backward()
    assert b.grad.shape == (4,)
    np.testing.assert_allclose(b.grad, 3.0)


def test_gather_rows_duplicate_indices_accumulate():
    x = leaf(np.arange(6.0).reshape(3, 2))
    ad.gather_rows(x, np.array([0, 0, 2])).sum().backward()
    np.testing.assert_allclose(x.grad, [[2, 2], [0, 0], [1, 1]])


def test_l2_normalize_zero_row():
    with pytest.raises(ContractError):
        ad.l2_normalize_rows(Tensor(np.zeros((1, 3))))


def test_injected_fault_scales_backward():
    x = leaf([1.0, 2.0])
    with ad.inject_fault("mul"):
        (x * 2.0).sum().backward()
    assert not np.allclose(x.grad, 2.0)
