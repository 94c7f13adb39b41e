"""Small dense linear-algebra helpers: symmetric vectorization and PSD utilities.

The scaled triangular vectorization (off-diagonals multiplied by sqrt(2))
makes Euclidean inner products of vectorized matrices equal Frobenius inner
products of the matrices, which keeps conic objectives linear.
"""

import numpy as np

from .errors import NumericalDomainError

SQRT2 = np.sqrt(2.0)


def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


def svec_indices(n: int):
    """(row, col) pairs of the triangle in storage order: (0,0),(0,1),(1,1),..."""
    return [(i, j) for j in range(n) for i in range(j + 1)]


def svec(mat: np.ndarray) -> np.ndarray:
    """Scaled triangular vectorization of a symmetric matrix."""
    n = mat.shape[0]
    out = np.empty(svec_dim(n))
    for k, (i, j) in enumerate(svec_indices(n)):
        out[k] = mat[i, j] if i == j else SQRT2 * mat[i, j]
    return out


def smat(vec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`svec`; the result is exactly symmetric."""
    d = vec.shape[0]
    n = int(round((np.sqrt(8 * d + 1) - 1) / 2))
    if svec_dim(n) != d:
        raise ValueError(f"length {d} is not a triangular number")
    out = np.zeros((n, n))
    for k, (i, j) in enumerate(svec_indices(n)):
        if i == j:
            out[i, i] = vec[k]
        else:
            out[i, j] = out[j, i] = vec[k] / SQRT2
    return out


def svec_basis(n: int):
    """Symmetric matrices E_k with svec(E_k) = e_k."""
    basis = []
    for i, j in svec_indices(n):
        e = np.zeros((n, n))
        if i == j:
            e[i, i] = 1.0
        else:
            e[i, j] = e[j, i] = 1.0 / SQRT2
        basis.append(e)
    return basis


def sym(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def min_eig(mat: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(sym(mat))[0])


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition (negative noise clipped)."""
    w, v = np.linalg.eigh(sym(mat))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def floored_inverse(mat: np.ndarray, floor: float) -> np.ndarray:
    """Inverse of a symmetric matrix with eigenvalues clipped from below.

    Eigenvalues slightly negative at solver-tolerance scale are clipped to the
    floor; a matrix indefinite beyond tolerance raises, since flooring would
    then silently fabricate an answer.
    """
    w, v = np.linalg.eigh(sym(mat))
    scale = max(1.0, float(w[-1]))
    if w[0] < -1e-6 * scale:
        raise NumericalDomainError(
            f"matrix is indefinite beyond solver tolerance "
            f"(min eigenvalue {w[0]:.3e} at scale {scale:.3e})")
    w = np.clip(w, floor, None)
    return (v / w) @ v.T


def cholesky_pd(mat: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor, raising NumericalDomainError when not PD."""
    try:
        return np.linalg.cholesky(sym(mat))
    except np.linalg.LinAlgError as exc:
        raise NumericalDomainError(f"{what} is not positive definite") from exc
