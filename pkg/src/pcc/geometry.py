"""Non-learned geometric primitives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .errors import ConfigError, ContractError


@dataclass
class PointCloud:
    points: np.ndarray
    id: str | None = None

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ContractError(f"point cloud must be N x 3, got {pts.shape}")
        if pts.shape[0] < 1:
            raise ContractError("point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise ContractError("point cloud has non-finite coordinates")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]


@dataclass
class NeighborGraph:
    k: int
    indices: np.ndarray  # N x K
    offsets: np.ndarray  # N x K x 3, p_i - p_j


def _coords(x) -> np.ndarray:
    if isinstance(x, PointCloud):
        return x.points
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x)


def knn_graph(cloud, k: int) -> NeighborGraph:
    """Exact Euclidean kNN graph, self excluded, ties broken by lower index."""
    pts = _coords(cloud)
    n = pts.shape[0]
    if k < 1 or k >= n:
        raise ConfigError(f"knn_graph: need 1 <= K < N, got K={k}, N={n}")
    idx = kernels.knn(pts, k)
    ad.record_branch(idx)
    offsets = pts[:, None, :] - pts[idx]
    return NeighborGraph(k=k, indices=idx, offsets=offsets)


def farthest_point_sample(cloud, m: int, start: int = 0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Greedy max-min subset of ``m`` indices beginning at ``start``.

    With ``rng`` given, the start index is drawn from it instead.
    """
    pts = _coords(cloud)
    n = pts.shape[0]
    if m < 1 or m > n:
        raise ConfigError(f"farthest_point_sample: need 1 <= M <= N, got M={m}, N={n}")
    if rng is not None:
        start = int(rng.integers(n))
    if not 0 <= start < n:
        raise ConfigError(f"farthest_point_sample: start {start} outside [0, {n})")
    return kernels.fps(pts, m, start)


def positional_encoding(coords, bands: int = 4) -> np.ndarray:
    """Sinusoidal encoding of raw coordinates.

    For coordinate ``c`` (x, y, z in turn) and band ``b`` the pair
    ``sin(2^b pi c), cos(2^b pi c)`` is emitted, so column ``2 * (c * bands + b)``
    holds the sine.  Output width is ``6 * bands``.
    """
    if bands < 1:
        raise ConfigError("positional_encoding needs bands >= 1")
    c = np.asarray(_coords(coords), dtype=np.float64)
    freq = (2.0 ** np.arange(bands)) * np.pi
    arg = c[:, :, None] * freq  # N x 3 x bands
    return np.stack([np.sin(arg), np.cos(arg)], axis=-1).reshape(c.shape[0], 6 * bands)


def chamfer_l2(p, q) -> float:
    """Bidirectional mean squared nearest-neighbour distance (no 1/2 factor).

    Computed in float64; see :func:`chamfer_loss` for the differentiable form.
    """
    a = np.asarray(_coords(p), dtype=np.float64)
    b = np.asarray(_coords(q), dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ContractError("chamfer_l2 on an empty cloud")
    d_ab, _ = kernels.nearest(a, b)
    d_ba, _ = kernels.nearest(b, a)
    return float(d_ab.mean() + d_ba.mean())


def chamfer_loss(pred: Tensor, gt) -> Tensor:
    """Differentiable Chamfer distance; gradients reach both arguments
    through the matched nearest-neighbour pairs."""
    gt = ad.as_tensor(gt) if not isinstance(gt, PointCloud) else Tensor(gt.points)
    a, b = pred.data, gt.data
    if len(a) == 0 or len(b) == 0:
        raise ContractError("chamfer_loss on an empty cloud")
    d_ab, i_ab = kernels.nearest(a, b)
    d_ba, i_ba = kernels.nearest(b, a)
    ad.record_branch(i_ab)
    ad.record_branch(i_ba)
    n, m = len(a), len(b)
    value = d_ab.mean() + d_ba.mean()

    def backward(g):
        g = float(g)
        diff_ab = a - b[i_ab]  # pred point minus its match
        diff_ba = b - a[i_ba]  # gt point minus its match
        ga = (2.0 * g / n) * diff_ab
        gb = np.zeros_like(b)
        kernels.scatter_add_rows(gb, i_ab, (-2.0 * g / n) * diff_ab)
        gb += (2.0 * g / m) * diff_ba
        kernels.scatter_add_rows(ga, i_ba, (-2.0 * g / m) * diff_ba)
        return ga, gb

    return ad._make(np.asarray(value), (pred, gt), backward, "chamfer")


def f_score(p, q, d: float = 0.001) -> float:
    """Harmonic mean of precision and recall at Euclidean threshold ``d``.

    A point counts as matched when its nearest neighbour in the other cloud is
    strictly closer than ``d``.  Returns 0 when neither side has a match.
    """
    if not d > 0:
        raise ConfigError(f"f_score threshold must be > 0, got {d}")
    a = np.asarray(_coords(p), dtype=np.float64)
    b = np.asarray(_coords(q), dtype=np.float64)
    d_ab, _ = kernels.nearest(a, b)
    d_ba, _ = kernels.nearest(b, a)
    prec = float(np.mean(np.sqrt(d_ab) < d))
    rec = float(np.mean(np.sqrt(d_ba) < d))
    if prec + rec == 0:
        return 0.0
    return 2.0 * prec * rec / (prec + rec)
