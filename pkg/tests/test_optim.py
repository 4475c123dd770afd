import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcc.autodiff import Tensor
from pcc.optim import AdamState, adam_step, clip_global_norm, lr_schedule


def test_schedule_examples():
    assert lr_schedule(0) == 0.1
    assert lr_schedule(49) == 0.1
    assert abs(lr_schedule(50) - 0.01) < 1e-15
    assert abs(lr_schedule(80) - 0.001) < 1e-15
    assert abs(lr_schedule(300) - 1e-5) < 1e-18


def test_schedule_negative_epoch():
    with pytest.raises(ValueError):
        lr_schedule(-1)


@given(st.integers(0, 1000), st.integers(0, 1000))
def test_schedule_monotone(a, b):
    lo, hi = sorted((a, b))
    assert lr_schedule(hi) <= lr_schedule(lo)


def _param(v):
    return Tensor(np.asarray(v, dtype=np.float32), requires_grad=True)


def test_first_step_is_lr_times_sign():
    p = _param([1.0, 1.0, 1.0])
    g = np.array([0.3, -2.0, 1e-3])
    adam_step([p], [g], AdamState(), 0.01)
    np.testing.assert_allclose(1.0 - p.data, 0.01 * np.sign(g), rtol=1e-4)


def test_zero_gradient_leaves_params():
    p = _param([0.5, -0.25])
    adam_step([p], [np.zeros(2)], AdamState(), 0.1)
    assert np.array_equal(p.data, np.float32([0.5, -0.25]))
    adam_step([p], [None], AdamState(), 0.1)
    assert np.array_equal(p.data, np.float32([0.5, -0.25]))


def test_two_steps_match_scalar_unroll():
    g, lr, b1, b2, eps = 0.7, 0.05, 0.9, 0.999, 1e-8
    x = 1.0
    m = v = 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    p = _param([1.0])
    state = AdamState()
    for _ in range(2):
        adam_step([p], [np.array([g])], state, lr)
    assert abs(float(p.data[0]) - x) < 1e-7


def test_clip_global_norm():
    grads = [np.array([3.0, 0.0]), np.array([[4.0]]), None]
    clipped, total = clip_global_norm(grads, 1.0)
    assert total == 5.0
    norm = np.sqrt(sum((g ** 2).sum() for g in clipped if g is not None))
    assert abs(norm - 1.0) < 1e-9
    same, _ = clip_global_norm(grads, 10.0)
    assert same[0] is grads[0]
    off, _ = clip_global_norm(grads, 0.0)
    assert off[0] is grads[0]
