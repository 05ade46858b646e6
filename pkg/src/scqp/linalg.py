"""Dense symmetric linear algebra: factorization, eigendecomposition, PSD tests.

Everything here operates on plain numpy arrays that are expected to be
symmetric.  The eigensolver is the workhorse behind every PSD feasibility
check and cone projection in the package.
"""

from dataclasses import dataclass

import numpy as np

# A matrix is "numerically PSD" when its smallest eigenvalue is at least
# -PSD_TOL_FACTOR * (1 + max-norm).  Every PSD feasibility check in the
# repo uses this convention.
PSD_TOL_FACTOR = 1e-7


class NotPositiveDefinite(Exception):
    """Cholesky pivot fell below the positive-definiteness threshold."""


class NonConvergence(Exception):
    """The symmetric eigensolver failed to converge (pathological input)."""


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues (ascending) and an orthonormal eigenvector basis."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def check_symmetric(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    scale = 1.0 + np.abs(m).max(initial=0.0)
    if np.abs(m - m.T).max(initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (m + m.T)


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L^T = m for positive definite m.

    Raises NotPositiveDefinite when a pivot falls below
    1e-12 * (1 + trace(m)/dim).
    """
    m = check_symmetric(m)
    n = m.shape[0]
    pivot_tol = 1e-12 * (1.0 + np.trace(m) / n)
    L = np.zeros_like(m)
    for j in range(n):
        pivot = m[j, j] - L[j, :j] @ L[j, :j]
        if pivot < pivot_tol:
            raise NotPositiveDefinite(f"pivot {pivot:.3e} at column {j}")
        L[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            L[j + 1 :, j] = (m[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def sym_eigen(m: np.ndarray) -> EigenDecomposition:
    """Full eigendecomposition of a symmetric matrix, values ascending."""
    m = check_symmetric(m)
    try:
        values, vectors = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - pathological
        raise NonConvergence(str(exc)) from exc
    return EigenDecomposition(values=values, vectors=vectors)


def min_eigenvalue(m: np.ndarray) -> float:
    return float(sym_eigen(m).values[0])


def is_numerically_psd(m: np.ndarray, tol_factor: float = PSD_TOL_FACTOR) -> bool:
    m = check_symmetric(m)
    scale = 1.0 + np.abs(m).max(initial=0.0)
    return min_eigenvalue(m) >= -tol_factor * scale


def psd_project(m: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the PSD cone (eigenvalue clipping)."""
    dec = sym_eigen(m)
    clipped = np.maximum(dec.values, 0.0)
    out = (dec.vectors * clipped) @ dec.vectors.T
    return 0.5 * (out + out.T)
