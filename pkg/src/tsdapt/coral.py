"""Closed-form correlation alignment (whiten by source, re-color by target)."""

from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, covariance, numerical_rank, sym_eig


@dataclass(frozen=True, eq=False)
class CoralTransform:
    """Affine map ``x -> (x - source_mean) @ A + target_mean``."""

    A: np.ndarray
    source_mean: np.ndarray
    target_mean: np.ndarray
    rank_used: int

    def transform(self, X):
        X = as_matrix(X)
        if X.shape[1] != self.A.shape[0]:
            raise ValueError(f"expected {self.A.shape[0]} columns, got {X.shape[1]}")
        return (X - self.source_mean) @ self.A + self.target_mean


def identity_transform(d):
    """The CORAL map that leaves every row unchanged."""
    z = np.zeros(d)
    return CoralTransform(np.eye(d), z, z.copy(), d)


def coral_fit(Xs, Xt, ridge=None):
    """Fit ``A = (C_S^+)^{1/2} (P_T[:r] S_T[:r]^{1/2} P_T[:r]^T)``.

    ``C_S`` and ``C_T`` are the ridge-regularized covariances of the source and
    target rows, ``r = min(rank C_S, rank C_T)``. With row vectors the
    transformed covariance ``A^T C_S A`` equals the top-``r`` part of ``C_T``.

    Parameters
    ----------
    Xs, Xt : array-like, shape (n, d)
    ridge : float or None
        Passed to :func:`tsdapt.linalg.covariance` for both sides.

    Raises
    ------
    DegenerateCovariance
    """
    Xs = as_matrix(Xs, "Xs")
    Xt = as_matrix(Xt, "Xt")
    if Xs.shape[1] != Xt.shape[1]:
        raise ValueError(f"dimension mismatch: {Xs.shape[1]} vs {Xt.shape[1]}")
    Cs = covariance(Xs, ridge)
    Ct = covariance(Xt, ridge)

    ws, Vs = sym_eig(Cs.matrix)
    wt, Vt = sym_eig(Ct.matrix)
    rs = numerical_rank(ws)
    r = min(rs, numerical_rank(wt))

    whiten = (Vs[:, :rs] / np.sqrt(ws[:rs])) @ Vs[:, :rs].T
    color = (Vt[:, :r] * np.sqrt(wt[:r])) @ Vt[:, :r].T
    return CoralTransform(whiten @ color, Xs.mean(axis=0), Xt.mean(axis=0), r)


def coral_apply(T, X):
    return T.transform(X)
