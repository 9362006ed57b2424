"""Distances and similarities between embedding sets, used to pick a transformation.

Every metric has a set-vs-set form (``score``) and a batched form
(``score_rows``) that scores each row of a matrix as a one-row set against a
common reference set. The batched form gives the same numbers up to rounding
and is what the pipeline uses.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .linalg import as_matrix, covariance, spd_from_matrix, spd_solve

TAGS = ("CC", "PC", "MMD", "kMMD", "HoMM", "CORAL", "CORAL_Jeff", "CORAL_Stein")
SIMILARITIES = ("CC", "PC")


@dataclass(frozen=True)
class MetricKind:
    """A selection metric and its parameters.

    ``bandwidth`` (kMMD) left as None is filled in from data by the pipeline;
    ``ridge`` None means the default scale-relative ridge.
    """

    tag: str = "kMMD"
    bandwidth: Optional[float] = None
    order: int = 3
    cap: int = 1_000_000
    ridge: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown metric {self.tag!r}; expected one of {TAGS}")
        if self.order < 1:
            raise ValueError("HoMM order must be >= 1")
        if self.cap < 1:
            raise ValueError("HoMM cap must be >= 1")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    @property
    def orientation(self):
        return "similarity" if self.tag in SIMILARITIES else "distance"

    @property
    def label(self):
        return f"HoMM{self.order}" if self.tag == "HoMM" else self.tag


def _sq_norm(v):
    v = np.ravel(v)
    return float(np.dot(v, v))


def median_heuristic(Z):
    """Median pairwise Euclidean distance between rows of ``Z`` (1.0 if degenerate)."""
    Z = as_matrix(Z)
    if Z.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(Z)))
    return med if med > 0 else 1.0


# ---------------------------------------------------------------------------
# correlation


def _pearson_rows(X):
    Xc = X - X.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(Xc, axis=1, keepdims=True)
    degenerate = norms[:, 0] == 0
    return np.where(norms > 0, Xc / np.where(norms > 0, norms, 1.0), 0.0), degenerate


def correlation(x, Y, kind="CC", return_flag=False):
    """Mean cross (dot-product) or Pearson correlation of ``x`` with the rows of ``Y``.

    A zero-variance vector has Pearson coefficient 0 by convention; with
    ``return_flag=True`` the result is ``(value, flagged)`` where ``flagged``
    tells whether that convention was used.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    Y = as_matrix(Y, "Y")
    flagged = False
    if kind == "CC":
        value = float(np.mean(Y @ x))
    elif kind == "PC":
        xn, dx = _pearson_rows(x[None, :])
        Yn, dy = _pearson_rows(Y)
        value = float(np.mean(Yn @ xn[0]))
        flagged = bool(dx.any() or dy.any())
    else:
        raise ValueError(f"unknown correlation kind {kind!r}")
    return (value, flagged) if return_flag else value


# ---------------------------------------------------------------------------
# mean discrepancies


def mmd_linear(X, Y):
    """Squared distance between the means of two sets."""
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    return _sq_norm(X.mean(axis=0) - Y.mean(axis=0))


def gaussian_kernel(X, Y, bandwidth):
    return np.exp(-cdist(X, Y, "sqeuclidean") / (2.0 * bandwidth**2))


def kmmd(X, Y, bandwidth):
    """Biased Gaussian-kernel MMD estimate ``mean Kxx + mean Kyy - 2 mean Kxy``."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    # exactly rounded sums make the result independent of argument order
    kxx = math.fsum(gaussian_kernel(X, X, bandwidth).ravel()) / X.shape[0] ** 2
    kyy = math.fsum(gaussian_kernel(Y, Y, bandwidth).ravel()) / Y.shape[0] ** 2
    kxy = math.fsum(gaussian_kernel(X, Y, bandwidth).ravel()) / (X.shape[0] * Y.shape[0])
    return float((kxx + kyy) - 2.0 * kxy)


def _moment_tensor(X, p):
    """Mean of ``x^{(x)p}`` over rows, as a flat array of length ``d**p``."""
    if p == 1:
        return X.mean(axis=0)
    n, d = X.shape
    T = X
    for _ in range(p - 1):
        T = (T[:, :, None] * X[:, None, :]).reshape(n, -1)
    return T.mean(axis=0)


def homm_index_subset(d, p, cap, seed):
    """Seeded tensor index tuples (shape ``(cap, p)``), or None if ``d**p <= cap``."""
    if d**p <= cap:
        return None
    rng = np.random.default_rng(seed)
    return rng.integers(0, d, size=(cap, p))


def _subset_moments(X, idx):
    prod = X[:, idx[:, 0]]
    for k in range(1, idx.shape[1]):
        prod = prod * X[:, idx[:, k]]
    return prod.mean(axis=0)


def homm(X, Y, order=3, cap=1_000_000, seed=0):
    """Higher-order moment matching distance.

    ``|| mean_x x^{(x)p} - mean_y y^{(x)p} ||_F^2``. When ``d**p`` exceeds
    ``cap`` the norm is estimated on a seeded random subset of ``cap`` index
    tuples shared by both sides and rescaled by ``d**p / cap``.
    """
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    d = X.shape[1]
    idx = homm_index_subset(d, order, cap, seed)
    if idx is None:
        return _sq_norm(_moment_tensor(X, order) - _moment_tensor(Y, order))
    diff = _subset_moments(X, idx) - _subset_moments(Y, idx)
    return _sq_norm(diff) * (d**order / idx.shape[0])


# ---------------------------------------------------------------------------
# covariance distances


def coral_distance(X, Y, variant="standard", ridge=None):
    """Distance between the covariances of two sets.

    ``standard`` is ``||C1 - C2||_F^2 / (4 d^2)``; ``Jeff`` is the symmetrized
    KL divergence ``tr(C1^-1 C2)/2 + tr(C2^-1 C1)/2 - d``; ``Stein`` is
    ``logdet((C1 + C2)/2) - logdet(C1)/2 - logdet(C2)/2``.
    """
    C1 = covariance(X, ridge)
    C2 = covariance(Y, ridge)
    d = C1.dim
    if variant == "standard":
        return _sq_norm(C1.matrix - C2.matrix) / (4.0 * d * d)
    if variant == "Jeff":
        t12 = np.trace(spd_solve(C1, C2.matrix))
        t21 = np.trace(spd_solve(C2, C1.matrix))
        return float(0.5 * (t12 + t21) - d)
    if variant == "Stein":
        mid = spd_from_matrix(0.5 * (C1.matrix + C2.matrix))
        return float(mid.logdet - 0.5 * (C1.logdet + C2.logdet))
    raise ValueError(f"unknown CORAL variant {variant!r}")


_CORAL_VARIANTS = {"CORAL": "standard", "CORAL_Jeff": "Jeff", "CORAL_Stein": "Stein"}


def score(kind, X, Y):
    """Evaluate metric ``kind`` between sets ``X`` and ``Y``.

    CC and PC average the pairwise correlation over all row pairs; for a
    one-row ``X`` this is :func:`correlation`.
    """
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    tag = kind.tag
    if tag in SIMILARITIES:
        return float(np.mean([correlation(x, Y, tag) for x in X]))
    if tag == "MMD":
        return mmd_linear(X, Y)
    if tag == "kMMD":
        bw = kind.bandwidth if kind.bandwidth is not None else median_heuristic(np.vstack([X, Y]))
        return kmmd(X, Y, bw)
    if tag == "HoMM":
        return homm(X, Y, kind.order, kind.cap, kind.seed)
    return coral_distance(X, Y, _CORAL_VARIANTS[tag], kind.ridge)


def score_rows(kind, R, Y):
    """Score every row of ``R`` as a one-row set against the set ``Y``.

    Returns an array of length ``len(R)`` equal (up to rounding) to
    ``[score(kind, r[None], Y) for r in R]`` but without the per-row loop.
    """
    R = as_matrix(R, "R")
    Y = as_matrix(Y, "Y")
    tag = kind.tag
    if tag == "CC":
        return (R @ Y.T).mean(axis=1)
    if tag == "PC":
        Rn, _ = _pearson_rows(R)
        Yn, _ = _pearson_rows(Y)
        return (Rn @ Yn.T).mean(axis=1)
    if tag == "MMD":
        diff = R - Y.mean(axis=0)
        return np.einsum("ij,ij->i", diff, diff)
    if tag == "kMMD":
        if kind.bandwidth is None:
            raise ValueError("score_rows needs an explicit kMMD bandwidth")
        kyy = gaussian_kernel(Y, Y, kind.bandwidth).mean()
        kry = gaussian_kernel(R, Y, kind.bandwidth).mean(axis=1)
        return (1.0 + kyy) - 2.0 * kry
    if tag == "HoMM":
        p = kind.order
        idx = homm_index_subset(R.shape[1], p, kind.cap, kind.seed)
        if idx is None:
            # ||r^p - mean y^p||^2 = (r.r)^p - 2 mean (r.y)^p + mean (y.y')^p
            yy = np.mean((Y @ Y.T) ** p)
            ry = np.mean((R @ Y.T) ** p, axis=1)
            rr = np.einsum("ij,ij->i", R, R) ** p
            return rr - 2.0 * ry + yy
        ref = _subset_moments(Y, idx)
        out = np.empty(R.shape[0])
        for i in range(R.shape[0]):
            out[i] = _sq_norm(_subset_moments(R[i : i + 1], idx) - ref)
        return out * (R.shape[1] ** p / idx.shape[0])
    return np.array([score(kind, r[None, :], Y) for r in R])
