"""Hot numeric loops: kNN, farthest point sampling, nearest-neighbour search,
row scatter-add.

Every kernel exists twice: a numba ``@njit`` loop and a pure-numpy version.
The numba path is used when numba imports and ``PCC_NUMBA`` is not set to
``0``; both paths return identical results (same distance arithmetic, same
lowest-index tie rule), which ``tests/test_kernels.py`` checks directly.

``PCC_THREADS`` caps numba's thread pool.
"""
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("PCC_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

if HAVE_NUMBA and os.environ.get("PCC_THREADS"):
    try:
        numba.set_num_threads(max(1, min(int(os.environ["PCC_THREADS"]), numba.config.NUMBA_NUM_THREADS)))
    except ValueError:
        pass

# numpy fallback processes the N x M distance matrix in row blocks of this size
_BLOCK = 1024


def _njit(func):
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


# ---------------------------------------------------------------------------
# k nearest neighbours (exact, self excluded, ties by ascending index)
# ---------------------------------------------------------------------------

@_njit
def _knn_nb(points, k):
    # bounded insertion list per row; scanning j upward with strict
    # comparisons keeps equal distances in ascending index order
    n = points.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    bd = np.empty(k, dtype=np.float64)
    bi = np.empty(k, dtype=np.int64)
    for i in range(n):
        xi = points[i, 0]
        yi = points[i, 1]
        zi = points[i, 2]
        filled = 0
        for j in range(n):
            if j == i:
                continue
            dx = xi - points[j, 0]
            dy = yi - points[j, 1]
            dz = zi - points[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if filled == k and not d < bd[k - 1]:
                continue
            p = filled if filled < k else k - 1
            while p > 0 and bd[p - 1] > d:
                if p < k:
                    bd[p] = bd[p - 1]
                    bi[p] = bi[p - 1]
                p -= 1
            bd[p] = d
            bi[p] = j
            if filled < k:
                filled += 1
        for c in range(k):
            out[i, c] = bi[c]
    return out


def _knn_np(points, k):
    n = points.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for s in range(0, n, _BLOCK):
        blk = points[s:s + _BLOCK]
        diff = blk[:, None, :] - points[None, :, :]
        d = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
        rows = np.arange(blk.shape[0])
        d[rows, s + rows] = np.inf
        out[s:s + blk.shape[0]] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


# ---------------------------------------------------------------------------
# farthest point sampling (greedy max-min, ties -> lowest index)
# ---------------------------------------------------------------------------

@_njit
def _fps_nb(points, m, start):
    n = points.shape[0]
    sel = np.empty(m, dtype=np.int64)
    mind = np.full(n, np.inf)
    cur = start
    for s in range(m):
        sel[s] = cur
        cx = points[cur, 0]
        cy = points[cur, 1]
        cz = points[cur, 2]
        best = -1.0
        best_j = 0
        for j in range(n):
            dx = points[j, 0] - cx
            dy = points[j, 1] - cy
            dz = points[j, 2] - cz
            d = dx * dx + dy * dy + dz * dz
            if d < mind[j]:
                mind[j] = d
            if mind[j] > best:
                best = mind[j]
                best_j = j
        cur = best_j
    return sel


def _fps_np(points, m, start):
    n = points.shape[0]
    sel = np.empty(m, dtype=np.int64)
    mind = np.full(n, np.inf)
    cur = start
    for s in range(m):
        sel[s] = cur
        diff = points - points[cur]
        d = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
        np.minimum(mind, d, out=mind)
        cur = int(np.argmax(mind))
    return sel


# ---------------------------------------------------------------------------
# nearest neighbour of every P point in Q (squared distance + index)
# ---------------------------------------------------------------------------

@_njit
def _nearest_nb(p, q):
    n = p.shape[0]
    m = q.shape[0]
    best_d = np.empty(n, dtype=np.float64)
    best_i = np.empty(n, dtype=np.int64)
    for i in range(n):
        px = p[i, 0]
        py = p[i, 1]
        pz = p[i, 2]
        bd = np.inf
        bi = 0
        for j in range(m):
            dx = px - q[j, 0]
            dy = py - q[j, 1]
            dz = pz - q[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < bd:
                bd = d
                bi = j
        best_d[i] = bd
        best_i[i] = bi
    return best_d, best_i


def _nearest_np(p, q):
    n = p.shape[0]
    best_d = np.empty(n, dtype=np.float64)
    best_i = np.empty(n, dtype=np.int64)
    for s in range(0, n, _BLOCK):
        diff = p[s:s + _BLOCK, None, :] - q[None, :, :]
        d = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
        idx = np.argmin(d, axis=1)
        best_i[s:s + idx.shape[0]] = idx
        best_d[s:s + idx.shape[0]] = d[np.arange(idx.shape[0]), idx]
    return best_d, best_i


# ---------------------------------------------------------------------------
# out[idx[r]] += src[r]  (backward of a row gather)
# ---------------------------------------------------------------------------

@_njit
def _scatter_add_rows_nb(out, idx, src):
    for r in range(idx.shape[0]):
        t = idx[r]
        for c in range(src.shape[1]):
            out[t, c] += src[r, c]
    return out


def _scatter_add_rows_np(out, idx, src):
    np.add.at(out, idx, src)
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _as_f64(points):
    return np.ascontiguousarray(points, dtype=np.float64)


def knn(points, k):
    """Indices of the ``k`` nearest other points for every row (N x k)."""
    pts = _as_f64(points)
    return (_knn_nb if USE_NUMBA else _knn_np)(pts, int(k))


def fps(points, m, start=0):
    return (_fps_nb if USE_NUMBA else _fps_np)(_as_f64(points), int(m), int(start))


def nearest(p, q):
    """Squared distance to, and index of, the nearest ``q`` row for each ``p`` row."""
    return (_nearest_nb if USE_NUMBA else _nearest_np)(_as_f64(p), _as_f64(q))


def scatter_add_rows(out, idx, src):
    """Accumulate ``src`` rows into ``out`` at ``idx`` (duplicates add up)."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    src = np.ascontiguousarray(src, dtype=out.dtype)
    return (_scatter_add_rows_nb if USE_NUMBA else _scatter_add_rows_np)(out, idx, src)


# Explicit per-backend handles for tests and the benchmark.
BACKENDS = {
    "numpy": {"knn": _knn_np, "fps": _fps_np, "nearest": _nearest_np, "scatter_add_rows": _scatter_add_rows_np},
}
if HAVE_NUMBA:
    BACKENDS["numba"] = {
        "knn": _knn_nb, "fps": _fps_nb, "nearest": _nearest_nb, "scatter_add_rows": _scatter_add_rows_nb,
    }
