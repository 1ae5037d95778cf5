"""Hot numeric kernels with numba and numpy implementations.

Each public function dispatches to the numba path when
:data:`labelfree._accel.NUMBA_ENABLED` is true. Both paths compute per-row
outputs independently, so results do not depend on thread scheduling.
"""
import numpy as np

from . import _accel

# numpy fallback: bound on rows*k*d elements materialised per distance chunk
_CHUNK_ELEMS = 1 << 22


def _spmm_loop(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    out = np.zeros((n, x.shape[1]), dtype=np.float64)
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            v = data[p]
            for c in range(x.shape[1]):
                out[i, c] += v * x[j, c]
    return out


def _nearest_loop(x, centers):
    n, d = x.shape
    k = centers.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist2 = np.empty(n, dtype=np.float64)
    for i in range(n):
        best = np.inf
        arg = 0
        for c in range(k):
            s = 0.0
            for t in range(d):
                diff = x[i, t] - centers[c, t]
                s += diff * diff
            if s < best:
                best = s
                arg = c
        labels[i] = arg
        dist2[i] = best
    return labels, dist2


def _cluster_sums_loop(x, labels, k):
    n, d = x.shape
    sums = np.zeros((k, d), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        c = labels[i]
        counts[c] += 1
        for t in range(d):
            sums[c, t] += x[i, t]
    return sums, counts


_spmm_jit = _accel.njit(_spmm_loop)
_nearest_jit = _accel.njit(_nearest_loop)
_cluster_sums_jit = _accel.njit(_cluster_sums_loop)


def spmm_numpy(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    rows = np.repeat(np.arange(n), np.diff(indptr))
    out = np.zeros((n, x.shape[1]), dtype=np.float64)
    np.add.at(out, rows, data[:, None] * x[indices])
    return out


def nearest_center_numpy(x, centers):
    n, d = x.shape
    k = centers.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist2 = np.empty(n, dtype=np.float64)
    step = max(1, _CHUNK_ELEMS // max(1, k * d))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        diff = x[lo:hi, None, :] - centers[None, :, :]
        d2 = np.einsum("ikd,ikd->ik", diff, diff)
        arg = np.argmin(d2, axis=1)
        labels[lo:hi] = arg
        dist2[lo:hi] = d2[np.arange(hi - lo), arg]
    return labels, dist2


def cluster_sums_numpy(x, labels, k):
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    sums = np.zeros((k, x.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, x)
    return sums, counts


def spmm_numba(indptr, indices, data, x):
    return _spmm_jit(indptr, indices, data, x)


def nearest_center_numba(x, centers):
    return _nearest_jit(x, centers)


def cluster_sums_numba(x, labels, k):
    return _cluster_sums_jit(x, labels, k)


def _prep(a, dtype=np.float64):
    return np.ascontiguousarray(a, dtype=dtype)


def spmm(indptr, indices, data, x):
    """CSR matrix times dense matrix (``x`` may be 1-D)."""
    vec = np.ndim(x) == 1
    x2 = _prep(x).reshape(len(x), -1)
    args = (_prep(indptr, np.int64), _prep(indices, np.int64), _prep(data), x2)
    out = spmm_numba(*args) if _accel.NUMBA_ENABLED else spmm_numpy(*args)
    return out[:, 0] if vec else out


def nearest_center(x, centers):
    """Index of and squared Euclidean distance to the nearest center per row.

    Ties go to the lowest center index.
    """
    args = (_prep(x), _prep(centers))
    if _accel.NUMBA_ENABLED:
        return nearest_center_numba(*args)
    return nearest_center_numpy(*args)


def cluster_sums(x, labels, k):
    """Per-cluster feature sums and member counts."""
    args = (_prep(x), _prep(labels, np.int64), int(k))
    if _accel.NUMBA_ENABLED:
        return cluster_sums_numba(*args)
    return cluster_sums_numpy(*args)
