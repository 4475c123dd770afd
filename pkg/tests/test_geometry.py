import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from pcc import autodiff as ad
from pcc.autodiff import Tensor
from pcc.errors import ConfigError, ContractError
from pcc.geometry import (PointCloud, chamfer_l2, chamfer_loss, f_score, farthest_point_sample, knn_graph,
                          positional_encoding)
from pcc.gradcheck import check_gradients

coord = st.floats(-10, 10, allow_nan=False, allow_infinity=False, width=32)


def clouds(min_n=1, max_n=24):
    return arrays(np.float64, st.tuples(st.integers(min_n, max_n), st.just(3)), elements=coord)


# ---------------------------------------------------------------- PointCloud

def test_point_cloud_rejects_bad_input():
    with pytest.raises(ContractError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ContractError):
        PointCloud(np.array([[0.0, np.nan, 0.0]]))
    with pytest.raises(ContractError):
        PointCloud(np.zeros((4, 2)))


# ---------------------------------------------------------------- kNN

def test_knn_worked_example():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0], [0, 0, 3]], dtype=float)
    assert list(knn_graph(pts, 2).indices[0]) == [1, 2]


def test_knn_k_equals_n_minus_1():
    pts = np.random.default_rng(0).normal(size=(7, 3))
    g = knn_graph(pts, 6)
    for i in range(7):
        assert sorted(g.indices[i]) == [j for j in range(7) if j != i]


def test_knn_duplicates_ordered_by_index():
    pts = np.array([[0, 0, 0], [1, 0, 0], [1, 0, 0], [5, 0, 0]], dtype=float)
    assert list(knn_graph(pts, 2).indices[0]) == [1, 2]


def test_knn_invalid_k():
    with pytest.raises(ConfigError):
        knn_graph(np.zeros((3, 3)), 3)


def test_knn_offsets_are_differences():
    pts = np.random.default_rng(1).normal(size=(10, 3))
    g = knn_graph(pts, 3)
    np.testing.assert_allclose(g.offsets, pts[:, None, :] - pts[g.indices])


@settings(max_examples=60, deadline=None)
@given(clouds(2, 30), st.integers(1, 29))
def test_knn_matches_oracle_property(pts, k):
    k = min(k, len(pts) - 1)
    idx = knn_graph(pts, k).indices
    assert np.array_equal(idx, oracles.knn(pts, k))
    assert not np.any(idx == np.arange(len(pts))[:, None])


# ---------------------------------------------------------------- FPS

def test_fps_collinear_example():
    pts = np.stack([np.arange(10.0), np.zeros(10), np.zeros(10)], axis=1)
    assert list(farthest_point_sample(pts, 3, 0)) == [0, 9, 4]


def test_fps_m_equals_n_and_m_one():
    pts = np.random.default_rng(2).normal(size=(6, 3))
    assert sorted(farthest_point_sample(pts, 6)) == list(range(6))
    assert list(farthest_point_sample(pts, 1, start=3)) == [3]


def test_fps_invalid():
    with pytest.raises(ConfigError):
        farthest_point_sample(np.zeros((3, 3)), 4)


@settings(max_examples=60, deadline=None)
@given(clouds(1, 30), st.data())
def test_fps_property(pts, data):
    m = data.draw(st.integers(1, len(pts)))
    start = data.draw(st.integers(0, len(pts) - 1))
    sel = farthest_point_sample(pts, m, start)
    assert sel[0] == start
    assert np.array_equal(sel, oracles.fps(pts, m, start))
    if len(np.unique(pts, axis=0)) == len(pts):
        assert len(set(sel.tolist())) == m


# ---------------------------------------------------------------- positional encoding

def test_positional_encoding_zero_coords():
    pe = positional_encoding(np.zeros((2, 3)), 4)
    assert pe.shape == (2, 24)
    assert np.all(pe[:, 0::2] == 0) and np.all(pe[:, 1::2] == 1)


def test_positional_encoding_single_band():
    pe = positional_encoding(np.array([[1.0, 0.0, 0.0]]), 1)
    np.testing.assert_allclose(pe[0, :2], [0.0, -1.0], atol=1e-6)


# ---------------------------------------------------------------- Chamfer

def test_chamfer_worked_examples():
    assert chamfer_l2([[0, 0, 0]], [[1, 0, 0]]) == 2.0
    assert chamfer_l2([[0, 0, 0], [2, 0, 0]], [[1, 0, 0]]) == 2.0
    p = np.random.default_rng(3).normal(size=(9, 3))
    assert chamfer_l2(p, p) == 0.0


@settings(max_examples=80, deadline=None)
@given(clouds(), clouds())
def test_chamfer_properties(p, q):
    c = chamfer_l2(p, q)
    assert c == chamfer_l2(q, p)
    assert c >= 0
    assert abs(c - oracles.chamfer(p, q)) <= 1e-9 * max(1.0, abs(c))


def test_chamfer_zero_iff_mutually_covering():
    p = np.array([[0, 0, 0], [1, 0, 0]], dtype=float)
    assert chamfer_l2(p, np.concatenate([p, p[:1]])) == 0.0
    assert chamfer_l2(p, p[:1]) > 0.0


def test_chamfer_rotation_invariant():
    rng = np.random.default_rng(4)
    p, q = rng.normal(size=(40, 3)), rng.normal(size=(30, 3))
    r, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    assert abs(chamfer_l2(p @ r.T, q @ r.T) - chamfer_l2(p, q)) < 1e-5


def test_chamfer_loss_value_and_gradients():
    rng = np.random.default_rng(5)
    with ad.precision(np.float64):
        pred = Tensor(rng.normal(size=(12, 3)), requires_grad=True)
        gt = Tensor(rng.normal(size=(9, 3)), requires_grad=True)
        loss = chamfer_loss(pred, gt)
        assert abs(loss.item() - oracles.chamfer(pred.data, gt.data)) < 1e-12
        err, n, _ = check_gradients(lambda: chamfer_loss(pred, gt), [pred, gt], rng)
    assert n > 0 and err < 1e-4


# ---------------------------------------------------------------- F-score

def test_fscore_worked_examples():
    p = np.random.default_rng(6).normal(size=(5, 3))
    assert f_score(p, p, 0.01) == 1.0
    assert f_score([[0, 0, 0]], [[10, 0, 0]], 0.001) == 0.0
    assert math.isclose(f_score([[0, 0, 0], [1, 0, 0]], [[0, 0, 0]], 0.5), 2 * 0.5 * 1.0 / 1.5)


def test_fscore_threshold_must_be_positive():
    with pytest.raises(ConfigError):
        f_score([[0, 0, 0]], [[0, 0, 0]], 0.0)


@settings(max_examples=60, deadline=None)
@given(clouds(), clouds(), st.floats(1e-3, 5), st.floats(1e-3, 5))
def test_fscore_properties(p, q, d1, d2):
    lo, hi = sorted((d1, d2))
    assert f_score(p, q, lo) <= f_score(p, q, hi)
    assert abs(f_score(p, q, lo) - oracles.fscore(p, q, lo)) <= 1e-9
