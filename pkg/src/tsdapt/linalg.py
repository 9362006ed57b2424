"""Small dense linear algebra used by CORAL fitting and covariance distances.

Everything operates on 2-D float64 numpy arrays. Decompositions are delegated
to LAPACK through numpy/scipy; this module fixes the conventions (descending
spectra, ridge handling, pseudo-inverse cutoff) that the callers rely on.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateCovariance, NumericalFailure

#: Eigenvalues below ``RANK_CUTOFF * lambda_max`` count as zero.
RANK_CUTOFF = 1e-10


def as_matrix(X, name="X"):
    """Return ``X`` as a finite 2-D float64 array (a 1-D input becomes one row)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite entries")
    return X


@dataclass(frozen=True, eq=False)
class SpdEstimate:
    """A ridge-regularized symmetric positive definite matrix with its factors.

    Attributes
    ----------
    matrix : ndarray, shape (dim, dim)
        The regularized matrix (ridge already added to the diagonal).
    ridge : float
        Value added to the diagonal.
    chol : ndarray, shape (dim, dim)
        Lower Cholesky factor of ``matrix``.
    logdet : float
        ``2 * sum(log(diag(chol)))``.
    """

    matrix: np.ndarray
    ridge: float
    chol: np.ndarray
    logdet: float

    @property
    def dim(self):
        return self.matrix.shape[0]


def default_ridge(matrix):
    """Scale-relative ridge ``1e-6 * trace / dim`` (``1e-6`` for a zero matrix)."""
    matrix = np.asarray(matrix)
    scale = np.trace(matrix) / matrix.shape[0]
    return 1e-6 * scale if scale > 0 else 1e-6


def spd_from_matrix(A, ridge=0.0):
    """Factorize ``A + ridge * I``.

    Raises
    ------
    DegenerateCovariance
        If the Cholesky factorization hits a non-positive pivot.
    """
    A = as_matrix(A, "A")
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    # exact symmetrization; callers build A from X^T X so asymmetry is rounding only
    M = 0.5 * (A + A.T)
    if ridge:
        M = M + ridge * np.eye(M.shape[0])
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovariance(
            f"Cholesky failed with ridge={ridge:g}; increase the ridge"
        ) from exc
    diag = np.diag(L)
    if not np.all(diag > 0):
        raise DegenerateCovariance(f"non-positive pivot with ridge={ridge:g}")
    return SpdEstimate(M, float(ridge), L, float(2.0 * np.sum(np.log(diag))))


def scatter(X):
    """Unbiased sample covariance ``(X - mean)^T (X - mean) / max(n - 1, 1)``."""
    X = as_matrix(X)
    Xc = X - X.mean(axis=0)
    return Xc.T @ Xc / max(X.shape[0] - 1, 1)


def covariance(X, ridge=None):
    """Sample covariance of the rows of ``X`` plus ``ridge * I``.

    Parameters
    ----------
    X : array-like, shape (n, d)
        Embeddings, one sample per row; ``n >= 1``.
    ridge : float or None
        Diagonal loading. ``None`` selects :func:`default_ridge` of the raw
        covariance.

    Returns
    -------
    SpdEstimate
    """
    X = as_matrix(X)
    if X.shape[0] < 1:
        raise ValueError("covariance needs at least one row")
    C = scatter(X)
    if ridge is None:
        ridge = default_ridge(C)
    return spd_from_matrix(C, ridge)


def sym_eig(A):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Returns
    -------
    w : ndarray, shape (n,)
    V : ndarray, shape (n, n)
        Orthonormal eigenvectors as columns, ``A @ V[:, i] = w[i] * V[:, i]``.
    """
    A = as_matrix(A, "A")
    try:
        w, V = np.linalg.eigh(0.5 * (A + A.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("symmetric eigensolver did not converge") from exc
    return w[::-1].copy(), V[:, ::-1].copy()


def svd(A):
    """Thin SVD ``A = U @ diag(s) @ V.T`` with ``s`` descending."""
    A = as_matrix(A, "A")
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("SVD did not converge") from exc
    return U, s, Vt.T


def spd_solve(S, B):
    """Solve ``S.matrix @ X = B`` with the stored Cholesky factor."""
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != S.dim:
        raise ValueError(f"B has {B.shape[0]} rows, expected {S.dim}")
    return scipy.linalg.cho_solve((S.chol, True), B)


def numerical_rank(w):
    """Count eigenvalues above the relative cutoff; ``w`` sorted descending."""
    if w.size == 0 or w[0] <= 0:
        return 0
    return int(np.sum(w > RANK_CUTOFF * w[0]))


def fractional_spd_power(S, p):
    """``V diag(w**p) V^T`` for ``p`` in {+1/2, -1/2}.

    For ``p = -1/2`` eigenvalues below ``RANK_CUTOFF * lambda_max`` map to zero
    (pseudo-inverse square root).
    """
    if p not in (0.5, -0.5):
        raise ValueError("p must be +0.5 or -0.5")
    M = S.matrix if isinstance(S, SpdEstimate) else as_matrix(S)
    w, V = sym_eig(M)
    r = numerical_rank(w)
    powered = np.zeros_like(w)
    if p > 0:
        powered = np.sqrt(np.clip(w, 0.0, None))
    else:
        powered[:r] = 1.0 / np.sqrt(w[:r])
    return (V * powered) @ V.T
