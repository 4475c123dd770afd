import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pcc import autodiff as ad
from pcc.autodiff import Tensor
from pcc.errors import ConfigError, DimensionError
from pcc.gradcheck import check_gradients
from pcc.losses import contrastive_loss, pool_global, total_loss


def test_pool_single_token_and_max():
    x = np.array([[1.0, -2.0, 3.0]])
    assert np.array_equal(pool_global(Tensor(x)).data, x.astype(np.float32))
    np.testing.assert_array_equal(pool_global(Tensor([[1.0, 0.0], [0.0, 2.0]])).data, [[1.0, 2.0]])


def test_pool_grad_routes_to_argmax_rows():
    x = Tensor(np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, -1.0]]), requires_grad=True)
    pool_global(x).sum().backward()
    assert np.array_equal(x.grad, [[1, 0], [0, 1], [0, 0]])


def test_pool_mean_and_unknown():
    np.testing.assert_allclose(pool_global(Tensor([[1.0], [3.0]]), "mean").data, [[2.0]])
    with pytest.raises(ConfigError):
        pool_global(Tensor([[1.0]]), "median")


def test_contrastive_b1_is_zero():
    v = np.random.default_rng(0).normal(size=(1, 5))
    assert contrastive_loss(Tensor(v), Tensor(v * 3)).item() == 0.0


def test_contrastive_b2_uniform():
    v = np.ones((2, 4))
    with ad.precision(np.float64):
        val = contrastive_loss(Tensor(v), Tensor(v)).item()
    assert abs(val - 2 * math.log(2)) < 1e-6


def test_contrastive_b2_orthogonal_tau1():
    g = np.eye(2)
    with ad.precision(np.float64):
        val = contrastive_loss(Tensor(g), Tensor(g), tau=1.0).item()
    assert abs(val - 2 * math.log(1 + math.exp(-1))) < 1e-6


def test_contrastive_uniform_gives_b_ln_b():
    for b in (3, 5):
        with ad.precision(np.float64):
            val = contrastive_loss(Tensor(np.ones((b, 3))), Tensor(np.ones((b, 3)))).item()
        assert abs(val - b * math.log(b)) < 1e-6


vecs = arrays(np.float64, st.tuples(st.integers(1, 6), st.just(4)),
              elements=st.floats(-5, 5, allow_nan=False)).filter(lambda a: np.all(np.linalg.norm(a, axis=1) > 1e-2))


@settings(max_examples=60, deadline=None)
@given(vecs, st.data())
def test_contrastive_scale_invariance_and_symmetry(g, data):
    v = data.draw(arrays(np.float64, g.shape, elements=st.floats(-5, 5, allow_nan=False))
                  .filter(lambda a: np.all(np.linalg.norm(a, axis=1) > 1e-2)))
    row = data.draw(st.integers(0, g.shape[0] - 1))
    with ad.precision(np.float64):
        base = contrastive_loss(Tensor(g), Tensor(v), 0.5).item()
        g7 = g.copy()
        g7[row] *= 7.0
        scaled = contrastive_loss(Tensor(g7), Tensor(v), 0.5).item()
        swapped = contrastive_loss(Tensor(v), Tensor(g), 0.5).item()
    assert abs(base - scaled) < 1e-6
    assert abs(base - swapped) < 1e-9 * max(1.0, abs(base))
    assert base >= -1e-12


def test_contrastive_shape_errors():
    with pytest.raises(DimensionError):
        contrastive_loss(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))))
    with pytest.raises(ConfigError):
        contrastive_loss(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))), tau=0.0)


def test_contrastive_gradcheck():
    rng = np.random.default_rng(1)
    with ad.precision(np.float64):
        g = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        v = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        err, n, _ = check_gradients(lambda: contrastive_loss(g, v, 0.3), [g, v], rng)
    assert n > 0 and err < 1e-4


def test_total_loss_weights():
    pred = Tensor([[0.0, 0.0, 0.0]])
    gt = np.array([[1.0, 0.0, 0.0]])  # chamfer = 2
    g = Tensor(np.ones((2, 3)))
    with ad.precision(np.float64):
        only_cd = total_loss(pred, gt, g, g, lambda_con=0.0).item()
        full = total_loss(pred, gt, g, g).item()
    assert abs(only_cd - 1.6) < 1e-12
    assert abs(full - (0.8 * 2.0 + 0.2 * 2 * math.log(2))) < 1e-9


def test_total_loss_zero_for_exact_b1():
    p = np.random.default_rng(2).normal(size=(5, 3))
    v = Tensor(np.ones((1, 3)))
    assert total_loss(Tensor(p), p, v, v).item() == 0.0


def test_total_loss_gradcheck_wrt_prediction():
    rng = np.random.default_rng(3)
    with ad.precision(np.float64):
        pred = Tensor(rng.normal(size=(10, 3)), requires_grad=True)
        gt = rng.normal(size=(8, 3))
        g = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        v = Tensor(rng.normal(size=(3, 4)))
        err, n, _ = check_gradients(lambda: total_loss(pred, gt, g, v), [pred, g], rng)
    assert n > 0 and err < 1e-3
