import numpy as np
import pytest
import scipy.sparse as sp

from labelfree import kernels


def _csr(rng, n, m, density=0.3):
    mat = sp.random(n, m, density=density, random_state=np.random.RandomState(rng.integers(1 << 30)), format="csr")
    return mat, mat.indptr.astype(np.int64), mat.indices.astype(np.int64), mat.data


def test_spmm_matches_scipy(kernel_backend):
    rng = np.random.default_rng(0)
    mat, indptr, indices, data = _csr(rng, 40, 30)
    x = rng.normal(size=(30, 5))
    np.testing.assert_allclose(kernels.spmm(indptr, indices, data, x), mat @ x, rtol=0, atol=1e-12)


def test_spmm_vector_input(kernel_backend):
    rng = np.random.default_rng(1)
    mat, indptr, indices, data = _csr(rng, 12, 12)
    v = rng.normal(size=12)
    out = kernels.spmm(indptr, indices, data, v)
    assert out.shape == (12,)
    np.testing.assert_allclose(out, mat @ v, atol=1e-12)


def test_spmm_empty_rows(kernel_backend):
    indptr = np.array([0, 0, 1, 1])
    out = kernels.spmm(indptr, np.array([2]), np.array([2.0]), np.arange(6, dtype=float).reshape(3, 2))
    np.testing.assert_array_equal(out, [[0, 0], [8, 10], [0, 0]])


def test_nearest_center_brute_force(kernel_backend):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(200, 4))
    c = rng.normal(size=(7, 4))
    labels, d2 = kernels.nearest_center(x, c)
    full = ((x[:, None, :] - c[None]) ** 2).sum(-1)
    np.testing.assert_array_equal(labels, full.argmin(1))
    np.testing.assert_allclose(d2, full.min(1), rtol=1e-12)


def test_nearest_center_ties_lowest_index(kernel_backend):
    x = np.array([[0.0, 0.0]])
    c = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    labels, d2 = kernels.nearest_center(x, c)
    assert labels[0] == 0 and d2[0] == 1.0


def test_nearest_center_numpy_chunking(monkeypatch):
    rng = np.random.default_rng(3)
    x, c = rng.normal(size=(500, 3)), rng.normal(size=(9, 3))
    ref = kernels.nearest_center_numpy(x, c)
    monkeypatch.setattr(kernels, "_CHUNK_ELEMS", 50)
    got = kernels.nearest_center_numpy(x, c)
    np.testing.assert_array_equal(got[0], ref[0])
    np.testing.assert_array_equal(got[1], ref[1])


def test_cluster_sums(kernel_backend):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(50, 3))
    labels = rng.integers(5, size=50)
    sums, counts = kernels.cluster_sums(x, labels, 6)
    for c in range(6):
        np.testing.assert_allclose(sums[c], x[labels == c].sum(0), atol=1e-12)
        assert counts[c] == (labels == c).sum()


@pytest.mark.skipif(kernels._spmm_jit is None, reason="numba not installed")
def test_backends_agree_bitwise():
    rng = np.random.default_rng(5)
    _, indptr, indices, data = _csr(rng, 60, 60)
    x = rng.normal(size=(60, 8))
    # both accumulate each row in index order, so the sums are identical
    np.testing.assert_array_equal(kernels.spmm_numba(indptr, indices, data, x),
                                  kernels.spmm_numpy(indptr, indices, data, x))
    c = rng.normal(size=(5, 8))
    np.testing.assert_array_equal(kernels.nearest_center_numba(x, c)[0], kernels.nearest_center_numpy(x, c)[0])
