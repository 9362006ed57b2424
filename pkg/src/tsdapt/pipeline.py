"""Class-wise source-to-target transformation, selection at inference, classification.

Typical use::

    transforms = fit_class_transforms(target_train, source_adapt, "sinkhorn")
    clf = fit_classifier(target_train)
    report = evaluate(source_val, transforms, target_train, MetricKind("kMMD"), clf)
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import ot
from .coral import coral_fit, identity_transform
from .errors import EmptyClass, MissingTargetClass, MissingTransform
from .linalg import as_matrix
from .metrics import MetricKind, median_heuristic, score_rows

TRANSFORM_KINDS = ("emd", "semd", "sinkhorn", "sinkhorn_lpl1", "sinkhorn_l1l2", "coral", "identity")
BOUNDS = ("selected", "oracle_upper", "none_lower")
CLASSIFIERS = ("nearest_centroid", "linear_softmax")


@dataclass(frozen=True)
class OtParams:
    """Knobs for the OT transformations.

    ``epsilon`` is the entropic weight; with ``normalization="none"`` the cost
    is divided by its max before Sinkhorn so the default stays meaningful.
    """

    metric_tag: str = "sqeuclidean"
    minkowski_p: float = 2.0
    normalization: str = "loglog"
    epsilon: float = 0.1
    eta: float = 0.5
    reg_lap: float = 0.1
    max_iter: int = 10_000
    tol: float = 1e-6
    outer_iter: int = 10
    max_cg_iter: int = 10
    oos_mode: str = "residual"


@dataclass(frozen=True, eq=False)
class ClassTransformSet:
    kind: str
    per_class: Dict[int, object]

    @property
    def classes(self):
        return sorted(self.per_class)

    def __getitem__(self, c):
        try:
            return self.per_class[int(c)]
        except KeyError:
            raise MissingTransform(f"no transformation fitted for class {c}") from None

    def __len__(self):
        return len(self.per_class)


def _fit_ot(Xs, Xt, kind, params):
    a = ot.uniform_weights(Xs.shape[0])
    b = ot.uniform_weights(Xt.shape[0])
    C = ot.build_cost_matrix(Xs, Xt, params.metric_tag, params.normalization, params.minkowski_p)
    M = C.entries
    if params.normalization == "none" and kind.startswith("sinkhorn") and M.max() > 0:
        M = M / M.max()
    if kind == "emd":
        plan = ot.solve_emd(a, b, M)
    elif kind == "semd":
        plan = ot.solve_emd_laplacian(a, b, M, Xs, Xt, params.reg_lap, params.max_cg_iter)
    elif kind == "sinkhorn":
        plan = ot.solve_sinkhorn(a, b, M, params.epsilon, params.max_iter, params.tol)
    else:
        variant = "LpL1" if kind == "sinkhorn_lpl1" else "L1L2"
        # every fitting row belongs to the same class here
        labels = np.zeros(Xs.shape[0], dtype=np.int64)
        plan = ot.solve_sinkhorn_class_reg(
            a, b, M, labels, variant, params.epsilon, params.eta,
            params.outer_iter, params.max_iter, params.tol,
        )
    return ot.fit_ot_transform(plan, Xs, Xt, mode=params.oos_mode)


def fit_class_transforms(target_train, source_adapt, transform_kind="sinkhorn", ot_params=None, ridge=None):
    """Fit one source-to-target transformation per class of ``source_adapt``.

    ``transform_kind="identity"`` stores the do-nothing map for every class,
    which is handy for no-shift checks.

    Raises
    ------
    MissingTargetClass
        A source class has no target rows.
    """
    if transform_kind not in TRANSFORM_KINDS:
        raise ValueError(f"unknown transform {transform_kind!r}; expected one of {TRANSFORM_KINDS}")
    if target_train.dim != source_adapt.dim:
        raise ValueError(f"embedding dims differ: {target_train.dim} vs {source_adapt.dim}")
    params = ot_params or OtParams()
    target_classes = set(target_train.classes.tolist())
    per_class = {}
    for c in source_adapt.classes.tolist():
        if c not in target_classes:
            raise MissingTargetClass(f"class {c} has source samples but no target samples")
        Xs = source_adapt.of_class(c)
        Xt = target_train.of_class(c)
        if transform_kind == "coral":
            per_class[c] = coral_fit(Xs, Xt, ridge)
        elif transform_kind == "identity":
            per_class[c] = identity_transform(source_adapt.dim)
        else:
            per_class[c] = _fit_ot(Xs, Xt, transform_kind, params)
    return ClassTransformSet(transform_kind, per_class)


# ---------------------------------------------------------------------------
# classifier


@dataclass(frozen=True, eq=False)
class Classifier:
    """Target-domain classifier standing in for a trained network head."""

    kind: str
    classes: np.ndarray
    centroids: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None

    @property
    def class_count(self):
        return self.classes.shape[0]

    def predict(self, X):
        X = as_matrix(X)
        if self.kind == "nearest_centroid":
            D = ((X[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=-1)
            return self.classes[np.argmin(D, axis=1)]
        return self.classes[np.argmax(X @ self.weights + self.bias, axis=1)]


def fit_classifier(target_train, kind="nearest_centroid", seed=0, epochs=500, lr=0.1):
    """Nearest-centroid or multinomial logistic regression on target embeddings.

    The softmax model is trained by full-batch gradient descent on the mean
    cross-entropy with a seeded small random initialization.
    """
    if kind not in CLASSIFIERS:
        raise ValueError(f"unknown classifier {kind!r}")
    X, y = target_train.X, target_train.y
    classes = np.unique(y)
    if classes.size == 0:
        raise EmptyClass("no training samples")
    if target_train.n_classes is not None:
        missing = sorted(set(range(target_train.n_classes)) - set(classes.tolist()))
        if missing:
            raise EmptyClass(f"classes without target samples: {missing}")
    centroids = np.stack([X[y == c].mean(axis=0) for c in classes])
    if kind == "nearest_centroid":
        return Classifier(kind, classes, centroids=centroids)

    rng = np.random.default_rng(seed)
    n, d = X.shape
    K = classes.size
    onehot = (y[:, None] == classes[None, :]).astype(np.float64)
    W = rng.normal(scale=0.01, size=(d, K))
    b = np.zeros(K)
    for _ in range(epochs):
        logits = X @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=1, keepdims=True)
        G = (P - onehot) / n
        W -= lr * (X.T @ G)
        b -= lr * G.sum(axis=0)
    return Classifier(kind, classes, centroids=centroids, weights=W, bias=b)


# ---------------------------------------------------------------------------
# selection and evaluation


@dataclass(frozen=True, eq=False)
class SelectionResult:
    chosen_class: int
    per_class_scores: np.ndarray
    orientation: str
    transformed_embedding: np.ndarray


@dataclass(frozen=True, eq=False)
class EvalReport:
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray
    bound: str
    predictions: np.ndarray = field(repr=False)

    @property
    def class_count(self):
        return self.confusion.shape[0]


def resolve_metric(metric, target_train):
    """Freeze data-dependent metric parameters (the kMMD bandwidth)."""
    if metric.tag == "kMMD" and metric.bandwidth is None:
        return dataclasses.replace(metric, bandwidth=median_heuristic(target_train.X))
    return metric


def select_batch(X, transforms, target_train, metric):
    """Score every candidate transformation for every row of ``X``.

    Returns ``(scores, chosen_index, transformed)`` where ``scores`` is
    ``(n, K)`` over ``transforms.classes``, ``chosen_index`` the best column
    per row (lowest class id on ties) and ``transformed`` the ``(K, n, d)``
    stack of transformed rows.
    """
    X = as_matrix(X)
    metric = resolve_metric(metric, target_train)
    classes = transforms.classes
    transformed = np.stack([transforms[c].transform(X) for c in classes])
    scores = np.empty((X.shape[0], len(classes)))
    for j, c in enumerate(classes):
        scores[:, j] = score_rows(metric, transformed[j], target_train.of_class(c))
    if metric.orientation == "similarity":
        chosen = np.argmax(np.where(np.isnan(scores), -np.inf, scores), axis=1)
    else:
        chosen = np.argmin(np.where(np.isnan(scores), np.inf, scores), axis=1)
    return scores, chosen, transformed


def select_and_classify(sample, transforms, target_train, metric, clf):
    """Pick the class transformation whose output best matches that class's targets.

    Returns
    -------
    (SelectionResult, int)
        The selection details and the classifier's prediction on the
        transformed sample.
    """
    x = np.asarray(sample, dtype=np.float64).ravel()
    scores, chosen, transformed = select_batch(x[None, :], transforms, target_train, metric)
    j = int(chosen[0])
    emb = transformed[j, 0]
    pred = int(clf.predict(emb[None, :])[0])
    result = SelectionResult(transforms.classes[j], scores[0], metric.orientation, emb)
    return result, pred


def make_report(y_true, y_pred, bound, n_classes):
    """Confusion matrix (rows = true class), per-class and overall accuracy."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    counts = confusion.sum(axis=1)
    per_class = np.full(n_classes, np.nan)
    seen = counts > 0
    per_class[seen] = np.diag(confusion)[seen] / counts[seen]
    total = int(counts.sum())
    accuracy = float(np.trace(confusion) / total) if total else float("nan")
    return EvalReport(accuracy, per_class, confusion, bound, y_pred)


def label_space_size(source_val, target_train, clf):
    sizes = [int(clf.classes.max()) + 1, source_val.n_classes or 0, target_train.n_classes or 0]
    if len(source_val):
        sizes.append(int(source_val.y.max()) + 1)
    return max(sizes)


def bound_embeddings(source_val, transforms, target_train, metric, bound="selected"):
    """The embeddings handed to the classifier under each protocol.

    ``selected`` runs transformation selection per sample; ``oracle_upper``
    applies the transformation of the sample's true class; ``none_lower``
    leaves the embeddings untouched.
    """
    if bound not in BOUNDS:
        raise ValueError(f"unknown bound {bound!r}")
    X, y = source_val.X, source_val.y
    if bound == "none_lower" or X.shape[0] == 0:
        return X
    if bound == "oracle_upper":
        Z = np.empty_like(X)
        for c in np.unique(y).tolist():
            rows = y == c
            Z[rows] = transforms[c].transform(X[rows])
        return Z
    _, chosen, transformed = select_batch(X, transforms, target_train, metric)
    return transformed[chosen, np.arange(X.shape[0])]


def evaluate(source_val, transforms, target_train, metric, clf, bound="selected"):
    """Classify ``source_val`` under one of the protocols in :func:`bound_embeddings`."""
    Z = bound_embeddings(source_val, transforms, target_train, metric, bound)
    pred = clf.predict(Z) if Z.shape[0] else np.empty(0, dtype=np.int64)
    return make_report(source_val.y, pred, bound, label_space_size(source_val, target_train, clf))
