"""Discrete optimal transport between two embedding sets.

Solvers return a :class:`TransportPlan`; :class:`OtTransform` wraps a plan with
its supports and maps new samples through it.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import InvalidWeights, NumericalFailure
from .linalg import as_matrix

log = logging.getLogger(__name__)

METRICS = ("sqeuclidean", "euclidean", "cityblock", "cosine", "minkowski")
NORMALIZATIONS = ("median", "max", "log", "loglog", "none")


@dataclass(frozen=True, eq=False)
class CostMatrix:
    entries: np.ndarray
    metric_tag: str
    normalization_tag: str
    normalization_skipped: bool = False

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """A coupling between weight vectors ``a`` (rows) and ``b`` (columns).

    ``transport_cost`` is ``<plan, C>`` without any regularization term.
    ``converged`` is False when an iterative solver hit its iteration cap.
    """

    plan: np.ndarray
    a: np.ndarray
    b: np.ndarray
    transport_cost: float
    converged: bool = True
    n_iter: int = 0

    def marginal_error(self):
        """Max absolute deviation of row and column sums from ``a`` and ``b``."""
        return max(
            np.max(np.abs(self.plan.sum(axis=1) - self.a)),
            np.max(np.abs(self.plan.sum(axis=0) - self.b)),
        )


def uniform_weights(n):
    return np.full(n, 1.0 / n)


def _cost_entries(C):
    return C.entries if isinstance(C, CostMatrix) else np.asarray(C, dtype=np.float64)


def build_cost_matrix(Xs, Xt, metric_tag="sqeuclidean", normalization_tag="none", p=2.0):
    """Pairwise ground cost between source rows and target rows.

    Parameters
    ----------
    Xs : array-like, shape (ns, d)
    Xt : array-like, shape (nt, d)
    metric_tag : str
        One of ``sqeuclidean``, ``euclidean``, ``cityblock``, ``cosine`` or
        ``minkowski`` (with exponent ``p``).
    normalization_tag : str
        ``median`` / ``max`` divide by the median / max entry, ``log`` maps
        ``m -> log(1 + m)``, ``loglog`` maps ``m -> log(1 + log(1 + m))``,
        ``none`` leaves the entries as they are.

    Returns
    -------
    CostMatrix
        ``normalization_skipped`` is set when a median/max divisor is zero.
    """
    Xs = as_matrix(Xs, "Xs")
    Xt = as_matrix(Xt, "Xt")
    if Xs.shape[1] != Xt.shape[1]:
        raise ValueError(f"dimension mismatch: {Xs.shape[1]} vs {Xt.shape[1]}")
    if metric_tag not in METRICS:
        raise ValueError(f"unknown metric {metric_tag!r}")
    if normalization_tag not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization_tag!r}")

    if metric_tag == "sqeuclidean":
        # direct differences keep identical rows at exactly zero
        M = ((Xs[:, None, :] - Xt[None, :, :]) ** 2).sum(axis=-1)
    elif metric_tag == "minkowski":
        M = cdist(Xs, Xt, "minkowski", p=p)
    else:
        M = cdist(Xs, Xt, metric_tag)
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{metric_tag} cost is undefined for these inputs (zero vectors?)")
    M = np.maximum(M, 0.0)

    skipped = False
    if normalization_tag in ("median", "max"):
        div = np.median(M) if normalization_tag == "median" else M.max()
        if div > 0:
            M = M / div
        else:
            skipped = True
    elif normalization_tag == "log":
        M = np.log1p(M)
    elif normalization_tag == "loglog":
        M = np.log1p(np.log1p(M))
    return CostMatrix(M, metric_tag, normalization_tag, skipped)


def _check_weights(a, b, shape):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape[0] != shape[0] or b.shape[0] != shape[1]:
        raise InvalidWeights(f"weights {a.shape[0]}x{b.shape[0]} do not match cost {shape}")
    for name, w in (("a", a), ("b", b)):
        if not np.all(np.isfinite(w)):
            raise InvalidWeights(f"{name} has non-finite entries")
        if np.any(w < 0):
            raise InvalidWeights(f"{name} has negative entries")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InvalidWeights(f"{name} sums to {w.sum()!r}, expected 1")
    return a, b


# ---------------------------------------------------------------------------
# exact EMD: transportation network simplex


def _tree_potentials(C, row_adj, col_adj):
    m, n = C.shape
    u = np.zeros(m)
    v = np.zeros(n)
    seen_r = np.zeros(m, bool)
    seen_c = np.zeros(n, bool)
    seen_r[0] = True
    stack = [(0, 0)]  # (kind, index); kind 0 = row, 1 = column
    while stack:
        kind, k = stack.pop()
        if kind == 0:
            for j in row_adj[k]:
                if not seen_c[j]:
                    seen_c[j] = True
                    v[j] = C[k, j] - u[k]
                    stack.append((1, j))
        else:
            for i in col_adj[k]:
                if not seen_r[i]:
                    seen_r[i] = True
                    u[i] = C[i, k] - v[k]
                    stack.append((0, i))
    return u, v


def _tree_path(i0, j0, m, row_adj, col_adj):
    """Basic arcs on the tree path from row ``i0`` to column ``j0``, in order."""
    # nodes: rows 0..m-1, columns m..m+n-1
    parent = {i0: None}
    queue = [i0]
    target = m + j0
    head = 0
    while head < len(queue):
        node = queue[head]
        head += 1
        if node == target:
            break
        if node < m:
            nbrs = (m + j for j in row_adj[node])
        else:
            nbrs = col_adj[node - m]
        for nb in nbrs:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    arcs = []
    node = target
    while parent[node] is not None:
        prev = parent[node]
        arcs.append((prev, node - m) if prev < m else (node, prev - m))
        node = prev
    arcs.reverse()
    return arcs


def _network_simplex(a, b, C, max_iter):
    m, n = C.shape
    flow = np.zeros((m, n))
    basic = np.zeros((m, n), bool)
    row_adj = [set() for _ in range(m)]
    col_adj = [set() for _ in range(n)]

    # north-west corner start: a staircase spanning tree with m + n - 1 arcs
    s = a.copy()
    d = b.copy()
    i = j = 0
    while True:
        x = min(s[i], d[j])
        flow[i, j] = x
        basic[i, j] = True
        row_adj[i].add(j)
        col_adj[j].add(i)
        row_first = s[i] <= d[j]
        s[i] -= x
        d[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif row_first:
            i += 1
        else:
            j += 1

    scale = max(1.0, float(np.max(np.abs(C))))
    tol = 1e-12 * scale
    degenerate_run = 0
    for it in range(max_iter):
        u, v = _tree_potentials(C, row_adj, col_adj)
        reduced = C - u[:, None] - v[None, :]
        reduced[basic] = 0.0
        if degenerate_run > m + n:
            # Bland: first improving cell in row-major order
            cand = np.flatnonzero(reduced.ravel() < -tol)
            if cand.size == 0:
                return flow, it
            flat = cand[0]
        else:
            flat = int(np.argmin(reduced))
            if reduced.flat[flat] >= -tol:
                return flow, it
        ei, ej = divmod(flat, n)

        path = _tree_path(ei, ej, m, row_adj, col_adj)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(flow[c] for c in minus)
        # Bland tie-break on the leaving arc: smallest (row, col)
        leave = min(c for c in minus if flow[c] == theta)
        degenerate_run = degenerate_run + 1 if theta == 0.0 else 0

        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[ei, ej] += theta
        flow[leave] = 0.0
        basic[leave] = False
        row_adj[leave[0]].discard(leave[1])
        col_adj[leave[1]].discard(leave[0])
        basic[ei, ej] = True
        row_adj[ei].add(ej)
        col_adj[ej].add(ei)
    raise NumericalFailure(f"network simplex did not terminate in {max_iter} pivots")


def solve_emd(a, b, C, max_iter=100_000):
    """Exact optimal transport plan by the transportation network simplex.

    Zero-mass rows/columns are pruned before solving and come back as zero
    rows/columns of the plan. The result is a vertex of the transportation
    polytope, so it has at most ``ns + nt - 1`` nonzeros.

    Raises
    ------
    InvalidWeights
        Negative or non-finite weights, or weights not summing to one.
    """
    M = _cost_entries(C)
    a, b = _check_weights(a, b, M.shape)
    rows = np.flatnonzero(a > 0)
    cols = np.flatnonzero(b > 0)
    sub, n_iter = _network_simplex(a[rows], b[cols], M[np.ix_(rows, cols)], max_iter)
    plan = np.zeros(M.shape)
    plan[np.ix_(rows, cols)] = sub
    return TransportPlan(plan, a, b, wasserstein_cost(plan, M), True, n_iter)


# ---------------------------------------------------------------------------
# entropic OT


def _sweep(loga, logb, M, epsilon, g):
    f = epsilon * (loga - logsumexp((g[None, :] - M) / epsilon, axis=1))
    g = epsilon * (logb - logsumexp((f[:, None] - M) / epsilon, axis=0))
    return f, g


def _row_error(a, M, epsilon, f, g):
    P = np.exp((f[:, None] + g[None, :] - M) / epsilon)
    return np.abs(P.sum(axis=1) - a).sum(), P


def _newton_step(a, b, M, epsilon, f, g):
    """One damped Newton ascent step on the entropic dual; None if no progress."""
    m, n = M.shape

    def dual(f, g):
        E = (f[:, None] + g[None, :] - M) / epsilon
        if E.max() > 700:
            return -np.inf
        return f @ a + g @ b - epsilon * np.exp(E).sum()

    P = np.exp((f[:, None] + g[None, :] - M) / epsilon)
    grad = np.concatenate([a - P.sum(axis=1), b - P.sum(axis=0)])
    H = np.empty((m + n, m + n))
    H[:m, :m] = np.diag(P.sum(axis=1))
    H[m:, m:] = np.diag(P.sum(axis=0))
    H[:m, m:] = P
    H[m:, :m] = P.T
    # the dual is invariant to (f + c, g - c): pin the last potential
    Hs = H[:-1, :-1] + 1e-14 * np.eye(m + n - 1)
    try:
        d = np.linalg.solve(Hs, grad[:-1])
    except np.linalg.LinAlgError:
        return None
    d = epsilon * np.append(d, 0.0)
    base = dual(f, g)
    slope = grad @ d
    t = 1.0
    while t > 1e-12:
        fn, gn = f + t * d[:m], g + t * d[m:]
        if dual(fn, gn) >= base + 1e-4 * t * slope:
            return fn, gn
        t *= 0.5
    return None


#: sweeps before switching to Newton polishing
NEWTON_AFTER = 200
#: Newton is used only while the dense (m + n)^2 Hessian stays small
NEWTON_MAX_SIZE = 1500


def _sinkhorn_log(a, b, M, epsilon, max_iter, tol, f=None, g=None):
    """Log-domain Sinkhorn; returns plan, converged flag, iterations, duals.

    Plain sweeps converge linearly with a rate that degrades as epsilon
    shrinks; once ``NEWTON_AFTER`` sweeps have not reached ``tol`` the
    remaining budget goes to Newton steps on the same dual (each followed by
    a rebalancing sweep), which converge quadratically near the optimum.
    """
    with np.errstate(divide="ignore"):
        loga = np.log(a)
        logb = np.log(b)
    g = np.zeros(b.shape[0]) if g is None else g.copy()
    f = np.zeros(a.shape[0]) if f is None else f.copy()
    use_newton = sum(M.shape) <= NEWTON_MAX_SIZE and np.all(a > 0) and np.all(b > 0)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        if use_newton and it > NEWTON_AFTER:
            step = _newton_step(a, b, M, epsilon, f, g)
            if step is None:
                use_newton = False
            else:
                f, g = step
        f, g = _sweep(loga, logb, M, epsilon, g)
        if it % 10 == 0 or it == max_iter or it > NEWTON_AFTER:
            err, _ = _row_error(a, M, epsilon, f, g)
            if err <= tol:
                converged = True
                break
    _, P = _row_error(a, M, epsilon, f, g)
    return P, converged, it, f, g


def solve_sinkhorn(a, b, C, epsilon=0.1, max_iter=10_000, tol=1e-6):
    """Entropic-regularized OT plan ``diag(u) exp(-C / epsilon) diag(v)``.

    Iterations run on the dual potentials in the log domain, so small
    ``epsilon`` does not underflow. Stops once the L1 violation of the row
    marginal (columns are exact after each sweep) drops to ``tol``.

    Returns
    -------
    TransportPlan
        ``converged`` is False if ``max_iter`` was reached first.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    M = _cost_entries(C)
    a, b = _check_weights(a, b, M.shape)
    P, converged, it, _, _ = _sinkhorn_log(a, b, M, epsilon, max_iter, tol)
    if not converged:
        log.warning("sinkhorn stopped after %d iterations without reaching tol=%g", it, tol)
    return TransportPlan(P, a, b, wasserstein_cost(P, M), converged, it)


def _class_groups(labels):
    labels = np.asarray(labels).ravel()
    return [np.flatnonzero(labels == c) for c in np.unique(labels)]


def _group_lasso(P, groups):
    return sum(np.linalg.norm(P[g], axis=0).sum() for g in groups)


def _group_lasso_grad(P, groups):
    G = np.zeros_like(P)
    for g in groups:
        norms = np.linalg.norm(P[g], axis=0)
        safe = np.where(norms > 0, norms, 1.0)
        G[g] = np.where(norms > 0, P[g] / safe, 0.0)
    return G


def solve_sinkhorn_class_reg(
    a,
    b,
    C,
    source_labels,
    variant="LpL1",
    epsilon=0.1,
    eta=0.5,
    outer_iter=10,
    max_iter=10_000,
    tol=1e-6,
):
    """Sinkhorn OT with a class-wise group-sparsity penalty on the plan.

    ``LpL1`` penalizes ``sum_j sum_c ||P[I_c, j]||_1 ** 0.5`` and is solved by
    majorization-minimization: every outer loop adds the linearized penalty
    to the cost and re-runs Sinkhorn. ``L1L2`` penalizes
    ``sum_j sum_c ||P[I_c, j]||_2`` and is solved by generalized conditional
    gradient with an exact scalar line search on the full objective.

    With ``eta == 0`` the penalty vanishes and this is :func:`solve_sinkhorn`.
    """
    if variant not in ("LpL1", "L1L2"):
        raise ValueError(f"unknown variant {variant!r}")
    M = _cost_entries(C)
    a, b = _check_weights(a, b, M.shape)
    labels = np.asarray(source_labels).ravel()
    if labels.shape[0] != M.shape[0]:
        raise ValueError("source_labels length must equal the number of source rows")
    if eta == 0:
        return solve_sinkhorn(a, b, M, epsilon, max_iter, tol)

    groups = _class_groups(labels)
    converged = True
    total_iter = 0
    if variant == "LpL1":
        p, damp = 0.5, 1e-3
        W = np.zeros_like(M)
        f = g = None
        for _ in range(outer_iter):
            P, ok, it, f, g = _sinkhorn_log(a, b, M + eta * W, epsilon, max_iter, tol, f, g)
            converged &= ok
            total_iter += it
            for idx in groups:
                W[idx] = p * (P[idx].sum(axis=0) + damp) ** (p - 1)
        return TransportPlan(P, a, b, wasserstein_cost(P, M), converged, total_iter)

    def objective(Q):
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(Q > 0, Q * np.log(Q), 0.0).sum()
        return float((Q * M).sum() + epsilon * ent + eta * _group_lasso(Q, groups))

    P, ok, it, f, g = _sinkhorn_log(a, b, M, epsilon, max_iter, tol)
    converged &= ok
    total_iter += it
    for _ in range(outer_iter):
        Mreg = M + eta * _group_lasso_grad(P, groups)
        Y, ok, it, f, g = _sinkhorn_log(a, b, Mreg, epsilon, max_iter, tol, f, g)
        converged &= ok
        total_iter += it
        D = Y - P
        res = minimize_scalar(
            lambda t: objective(P + t * D), bounds=(0.0, 1.0), method="bounded"
        )
        step = res.x if objective(P + res.x * D) < objective(P) else 0.0
        if step <= 0.0:
            break
        P = P + step * D
    return TransportPlan(P, a, b, wasserstein_cost(P, M), converged, total_iter)


# ---------------------------------------------------------------------------
# Laplacian-regularized EMD


def median_sq_distance(X):
    """Median squared Euclidean distance over distinct row pairs (1.0 if none > 0)."""
    X = as_matrix(X)
    if X.shape[0] < 2:
        return 1.0
    D = cdist(X, X, "sqeuclidean")
    vals = D[np.triu_indices(X.shape[0], k=1)]
    med = float(np.median(vals))
    return med if med > 0 else 1.0


def knn_laplacian(X, k=None, bandwidth=None):
    """Graph Laplacian of a symmetric kNN graph with Gaussian edge weights.

    ``k`` defaults to ``min(5, n - 1)`` and ``bandwidth`` to the median
    squared pairwise distance; edge weight is ``exp(-||xi - xj||^2 / bandwidth)``.
    """
    X = as_matrix(X)
    n = X.shape[0]
    if n < 2:
        return np.zeros((n, n))
    k = min(5, n - 1) if k is None else min(k, n - 1)
    bandwidth = median_sq_distance(X) if bandwidth is None else bandwidth
    D = cdist(X, X, "sqeuclidean")
    np.fill_diagonal(D, np.inf)
    nbrs = np.argsort(D, axis=1, kind="stable")[:, :k]
    A = np.zeros((n, n), bool)
    A[np.repeat(np.arange(n), k), nbrs.ravel()] = True
    A |= A.T
    np.fill_diagonal(D, 0.0)
    W = np.where(A, np.exp(-D / bandwidth), 0.0)
    return np.diag(W.sum(axis=1)) - W


class LaplacianPenalty:
    """Quadratic smoothness penalty on barycentric displacements.

    ``Omega(P) = alpha / ns * tr(Ys^T Ls Ys) + (1 - alpha) / nt * tr(Yt^T Lt Yt)``
    where ``Ys = diag(1/a) P Xt`` are the images of source points,
    ``Yt = diag(1/b) P^T Xs`` the images of target points, and ``Ls``, ``Lt``
    are kNN-graph Laplacians of the source and target supports. Neighbouring
    points are thus pushed to move coherently.
    """

    def __init__(self, a, b, Xs, Xt, alpha=0.5):
        self.alpha = alpha
        self.Xs = as_matrix(Xs, "Xs")
        self.Xt = as_matrix(Xt, "Xt")
        ia = np.where(a > 0, 1.0 / np.where(a > 0, a, 1.0), 0.0)
        ib = np.where(b > 0, 1.0 / np.where(b > 0, b, 1.0), 0.0)
        Ls = knn_laplacian(self.Xs)
        Lt = knn_laplacian(self.Xt)
        ns, nt = self.Xs.shape[0], self.Xt.shape[0]
        # diag(1/a) L diag(1/a), pre-scaled by the term weight
        self.Ks = alpha / ns * (ia[:, None] * Ls * ia[None, :])
        self.Kt = (1 - alpha) / nt * (ib[:, None] * Lt * ib[None, :])
        self.Gt = self.Xt @ self.Xt.T
        self.Gs = self.Xs @ self.Xs.T

    def value(self, P):
        return float(
            np.sum((self.Ks @ P) * (P @ self.Gt)) + np.sum((P.T @ self.Gs) * (self.Kt @ P.T))
        )

    def grad(self, P):
        return 2.0 * (self.Ks @ P @ self.Gt + self.Gs @ P @ self.Kt)


def solve_emd_laplacian(a, b, C, Xs, Xt, reg_lap=1.0, max_cg_iter=10, stop_tol=1e-9):
    """EMD with a Laplacian smoothness penalty, by conditional gradient.

    Minimizes ``<P, C> + reg_lap * Omega(P)`` (see :class:`LaplacianPenalty`)
    over couplings. Starts from the plain EMD plan; each step solves a linear
    EMD on the gradient and takes the exact minimizing step along the segment,
    so every iterate is a convex combination of EMD vertices and the
    objective never increases.
    """
    M = _cost_entries(C)
    a, b = _check_weights(a, b, M.shape)
    P = solve_emd(a, b, M).plan
    if reg_lap == 0 or min(M.shape) == 1:
        return TransportPlan(P, a, b, wasserstein_cost(P, M), True, 0)
    pen = LaplacianPenalty(a, b, Xs, Xt)
    grad_lin = M

    def obj(Q):
        return float((Q * M).sum()) + reg_lap * pen.value(Q)

    current = obj(P)
    it = 0
    for it in range(1, max_cg_iter + 1):
        G = grad_lin + reg_lap * pen.grad(P)
        Y = solve_emd(a, b, G).plan
        D = Y - P
        slope = float((G * D).sum())
        if slope >= -stop_tol * max(1.0, abs(current)):
            break
        curv = reg_lap * pen.value(D)
        step = 1.0 if curv <= 0 else min(1.0, -slope / (2.0 * curv))
        cand = P + step * D
        new = obj(cand)
        if new > current:
            break
        P, current = cand, new
    return TransportPlan(P, a, b, wasserstein_cost(P, M), True, it)


# ---------------------------------------------------------------------------


def wasserstein_cost(P, C):
    """``sum_ij P_ij C_ij``; for ``C = d**p`` the Wasserstein-p distance is this ``** (1/p)``."""
    plan = P.plan if isinstance(P, TransportPlan) else np.asarray(P, dtype=np.float64)
    M = _cost_entries(C)
    if plan.shape != M.shape:
        raise ValueError(f"plan {plan.shape} and cost {M.shape} differ in shape")
    return float(np.sum(plan * M))


def wasserstein_distance(P, C, p=2):
    return wasserstein_cost(P, C) ** (1.0 / p)


@dataclass(frozen=True, eq=False)
class OtTransform:
    """An OT plan together with its supports, usable as a map on new samples.

    Attributes
    ----------
    plan : TransportPlan
    source_support, target_support : ndarray
        Rows the plan was fitted on.
    oos_bandwidth : float
        Gaussian kernel bandwidth (on squared distances) for new samples.
    mode : str
        ``"residual"`` adds the sample's offset from its kernel-weighted
        source neighbourhood to the mapped position; ``"barycentric"``
        returns the kernel-weighted average of the barycentric images only.
    """

    plan: TransportPlan
    source_support: np.ndarray
    target_support: np.ndarray
    oos_bandwidth: float
    mode: str = "residual"
    images: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = self.plan.plan
        if P.shape != (self.source_support.shape[0], self.target_support.shape[0]):
            raise ValueError("plan dimensions do not match the supports")
        if self.mode not in ("residual", "barycentric"):
            raise ValueError(f"unknown mode {self.mode!r}")
        mass = P.sum(axis=1, keepdims=True)
        safe = np.where(mass > 0, mass, 1.0)
        images = np.where(mass > 0, (P / safe) @ self.target_support, self.target_support.mean(axis=0))
        object.__setattr__(self, "images", images)

    def transform(self, X, return_fallback=False):
        """Map rows of ``X``; optionally also return the nearest-row fallback mask.

        A row within 1e-12 (max-abs) of a support row maps to that row's
        barycentric image. Other rows use Gaussian weights
        ``exp(-||x - s_i||^2 / oos_bandwidth)`` over the source support; if
        they all underflow the nearest support row gets weight one.
        """
        X = as_matrix(X)
        S = self.source_support
        if X.shape[1] != S.shape[1]:
            raise ValueError(f"expected {S.shape[1]} columns, got {X.shape[1]}")
        D = cdist(X, S, "sqeuclidean")
        W = np.exp(-D / self.oos_bandwidth)
        total = W.sum(axis=1)
        fallback = ~(total > 0)
        W[fallback] = 0.0
        W[fallback, np.argmin(D[fallback], axis=1)] = 1.0
        W /= W.sum(axis=1, keepdims=True)

        hit = cdist(X, S, "chebyshev") <= 1e-12
        on_support = hit.any(axis=1)
        fallback &= ~on_support
        W[on_support] = 0.0
        W[on_support, np.argmax(hit[on_support], axis=1)] = 1.0

        out = W @ self.images
        if self.mode == "residual":
            moved = ~on_support
            out[moved] += X[moved] - W[moved] @ S
        if fallback.any():
            log.debug("%d samples fell back to the nearest support row", int(fallback.sum()))
        return (out, fallback) if return_fallback else out


def fit_ot_transform(plan, source_support, target_support, oos_bandwidth=None, mode="residual"):
    Xs = as_matrix(source_support, "source_support")
    Xt = as_matrix(target_support, "target_support")
    bw = median_sq_distance(Xs) if oos_bandwidth is None else float(oos_bandwidth)
    return OtTransform(plan, Xs, Xt, bw, mode)


def ot_transform_sample(T, x):
    """Map a single embedding row through ``T``."""
    return T.transform(np.asarray(x, dtype=np.float64)[None, :])[0]
