"""Dense symmetric linear algebra: factorizations, eigen, PSD helpers.

Oracle values are computed by hand:
  cholesky([[4,2],[2,5]])  -> [[2,0],[1,2]] since L L^T reproduces the input.
  eig([[2,1],[1,2]])       -> {1, 3} with eigenvectors (1,-1)/sqrt2, (1,1)/sqrt2.
  psd_project([[0,1],[1,0]]) -> [[.5,.5],[.5,.5]] (drop the -1 eigenvalue).
"""

import numpy as np
import pytest

from scqp import linalg


def test_cholesky_hand_value():
    L = linalg.cholesky(np.array([[4.0, 2.0], [2.0, 5.0]]))
    assert np.allclose(L, [[2.0, 0.0], [1.0, 2.0]], atol=1e-12)


def test_cholesky_reconstructs():
    rng = np.random.default_rng(7)
    B = rng.standard_normal((5, 5))
    M = B @ B.T + 5.0 * np.eye(5)
    L = linalg.cholesky(M)
    assert np.allclose(L @ L.T, M, atol=1e-10)
    assert np.allclose(np.triu(L, 1), 0.0)


def test_cholesky_rejects_indefinite():
    with pytest.raises(linalg.NotPositiveDefinite):
        linalg.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_sym_eigen_hand_value():
    dec = linalg.sym_eigen(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(np.sort(dec.values), [1.0, 3.0], atol=1e-12)
    M = dec.vectors @ np.diag(dec.values) @ dec.vectors.T
    assert np.allclose(M, [[2.0, 1.0], [1.0, 2.0]], atol=1e-10)


def test_min_eigenvalue():
    assert linalg.min_eigenvalue(np.diag([3.0, -2.0, 7.0])) == pytest.approx(-2.0)


def test_check_symmetric_rejects():
    with pytest.raises(Exception):
        linalg.check_symmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_is_numerically_psd():
    assert linalg.is_numerically_psd(np.eye(3))
    assert linalg.is_numerically_psd(np.zeros((2, 2)))
    assert not linalg.is_numerically_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_psd_project_hand_value():
    P = linalg.psd_project(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.allclose(P, [[0.5, 0.5], [0.5, 0.5]], atol=1e-12)


def test_psd_project_fixed_point_on_psd():
    rng = np.random.default_rng(3)
    B = rng.standard_normal((4, 4))
    M = B @ B.T
    assert np.allclose(linalg.psd_project(M), M, atol=1e-10)
