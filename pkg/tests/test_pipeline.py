import numpy as np
import pytest

from tsdapt.coral import identity_transform
from tsdapt.data import LabeledEmbeddings, synthetic_splits
from tsdapt.errors import EmptyClass, MissingTargetClass, MissingTransform
from tsdapt.metrics import MetricKind, score
from tsdapt.pipeline import (
    ClassTransformSet,
    OtParams,
    TRANSFORM_KINDS,
    evaluate,
    fit_class_transforms,
    fit_classifier,
    make_report,
    select_and_classify,
    select_batch,
)


def _identity_set(d, classes):
    return ClassTransformSet("identity", {c: identity_transform(d) for c in classes})


def _blobs(seed, K=10, n=30, d=5, sep=5.0):
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((K, d))
    centers *= sep / np.min([np.linalg.norm(a - b) for i, a in enumerate(centers) for b in centers[i + 1 :]])
    y = np.repeat(np.arange(K), n)
    # unit noise, centers at least ``sep`` sigma apart
    X = centers[y] + rng.standard_normal((K * n, d))
    return LabeledEmbeddings(X, y, K)


# fitting


def test_identical_domains_give_zero_cost_emd():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 3))
    data = LabeledEmbeddings(X, [0, 0, 0, 1, 1, 1])
    tr = fit_class_transforms(data, data, "emd", OtParams(normalization="none"))
    for c in (0, 1):
        T = tr[c]
        assert T.plan.transport_cost == 0.0
        np.testing.assert_array_equal(T.transform(data.of_class(c)), data.of_class(c))


def test_scalar_coral_per_class():
    a = np.array([-1.0, 1.0]) * np.sqrt(2.0)  # variance 4
    b = np.array([-1.0, 1.0]) * np.sqrt(4.5)  # variance 9
    src = LabeledEmbeddings(np.concatenate([a, a + 10])[:, None], [0, 0, 1, 1])
    tgt = LabeledEmbeddings(np.concatenate([b, b - 10])[:, None], [0, 0, 1, 1])
    tr = fit_class_transforms(tgt, src, "coral", ridge=0.0)
    for c in (0, 1):
        assert tr[c].A[0, 0] == pytest.approx(1.5, abs=1e-12)


def test_sinkhorn_plans_satisfy_marginals():
    rng = np.random.default_rng(1)
    y = [0, 0, 0, 1, 1, 1]
    src = LabeledEmbeddings(rng.standard_normal((6, 2)), y)
    tgt = LabeledEmbeddings(rng.standard_normal((6, 2)), y)
    tr = fit_class_transforms(tgt, src, "sinkhorn", OtParams(epsilon=0.1))
    for c in (0, 1):
        assert tr[c].plan.marginal_error() <= 1e-6


@pytest.mark.parametrize("kind", TRANSFORM_KINDS)
def test_every_kind_fits_one_transform_per_class(kind):
    s = synthetic_splits(0.3, 0, n_target=12, n_adapt=8, n_val=4)
    tr = fit_class_transforms(s.target_train, s.source_adapt, kind)
    assert tr.classes == list(range(10)) and len(tr) == 10
    Z = tr[3].transform(s.source_val.X)
    assert Z.shape == s.source_val.X.shape and np.all(np.isfinite(Z))


def test_missing_target_class():
    src = LabeledEmbeddings(np.zeros((2, 1)), [0, 1])
    tgt = LabeledEmbeddings(np.zeros((1, 1)), [0])
    with pytest.raises(MissingTargetClass):
        fit_class_transforms(tgt, src, "emd")


def test_missing_transform_lookup():
    with pytest.raises(MissingTransform):
        _identity_set(2, [0])[5]


def test_fit_rejects_unknown_kind_and_dim_mismatch():
    d1 = LabeledEmbeddings(np.zeros((1, 2)), [0])
    with pytest.raises(ValueError):
        fit_class_transforms(d1, d1, "procrustes")
    with pytest.raises(ValueError):
        fit_class_transforms(d1, LabeledEmbeddings(np.zeros((1, 3)), [0]), "emd")


# classifier


def test_one_sample_per_class_nearest_centroid():
    X = np.random.default_rng(2).standard_normal((4, 3))
    clf = fit_classifier(LabeledEmbeddings(X, [0, 1, 2, 3]))
    np.testing.assert_array_equal(clf.predict(X), [0, 1, 2, 3])


@pytest.mark.parametrize("kind", ["nearest_centroid", "linear_softmax"])
def test_symmetric_1d_boundary(kind):
    data = LabeledEmbeddings(np.array([[-1.0], [1.0]]), [0, 1])
    clf = fit_classifier(data, kind, seed=0, epochs=2000)
    np.testing.assert_array_equal(clf.predict([[-0.05], [0.05], [-3.0], [3.0]]), [0, 1, 0, 1])


@pytest.mark.parametrize("kind", ["nearest_centroid", "linear_softmax"])
def test_blobs_training_accuracy(kind):
    data = _blobs(3)
    clf = fit_classifier(data, kind, seed=0)
    assert np.mean(clf.predict(data.X) == data.y) >= 0.99


def test_softmax_is_seeded():
    data = _blobs(4, K=3, n=10)
    a, b = fit_classifier(data, "linear_softmax", seed=5), fit_classifier(data, "linear_softmax", seed=5)
    assert a.weights.tobytes() == b.weights.tobytes()
    c = fit_classifier(data, "linear_softmax", seed=6)
    assert not np.array_equal(a.weights, c.weights)


def test_empty_class_rejected():
    with pytest.raises(EmptyClass):
        fit_classifier(LabeledEmbeddings(np.zeros((2, 1)), [0, 2], n_classes=3))
    with pytest.raises(EmptyClass):
        fit_classifier(LabeledEmbeddings(np.zeros((0, 1)), np.zeros(0, dtype=int)))


# selection


def test_tie_break_picks_lowest_class():
    # identical transforms and identical class targets make every score equal
    tied = LabeledEmbeddings(np.ones((8, 2)), np.repeat(np.arange(4), 2))
    res, pred = select_and_classify(np.array([1.0, -1.0]), _identity_set(2, range(4)), tied, MetricKind("CC"), fit_classifier(tied))
    assert np.all(res.per_class_scores == res.per_class_scores[0])
    assert res.chosen_class == 0
    assert pred == int(fit_classifier(tied).predict(res.transformed_embedding[None, :])[0])


def test_identity_transforms_recover_the_cluster():
    data = _blobs(6, K=5, n=20, d=4, sep=10.0)
    clf = fit_classifier(data)
    tr = _identity_set(4, range(5))
    rng = np.random.default_rng(7)
    for j in range(5):
        x = data.of_class(j)[rng.integers(20)]
        res, pred = select_and_classify(x, tr, data, MetricKind("MMD"), clf)
        assert res.chosen_class == j and pred == j
        assert res.orientation == "distance"


def test_selection_scores_are_class_conditional():
    data = _blobs(8, K=3, n=6, d=3)
    tr = _identity_set(3, range(3))
    x = data.X[0]
    res, _ = select_and_classify(x, tr, data, MetricKind("kMMD", bandwidth=1.0), fit_classifier(data))
    expected = [score(MetricKind("kMMD", bandwidth=1.0), x[None, :], data.of_class(c)) for c in range(3)]
    np.testing.assert_allclose(res.per_class_scores, expected, atol=1e-12)


def test_similarity_metrics_use_argmax():
    tgt = LabeledEmbeddings(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1])
    res, _ = select_and_classify(np.array([0.1, 2.0]), _identity_set(2, [0, 1]), tgt, MetricKind("CC"), fit_classifier(tgt))
    assert res.chosen_class == 1 and res.orientation == "similarity"


def test_batch_selection_matches_single_sample_path():
    s = synthetic_splits(0.6, 2, n_target=15, n_adapt=10, n_val=3)
    tr = fit_class_transforms(s.target_train, s.source_adapt, "sinkhorn")
    clf = fit_classifier(s.target_train)
    metric = MetricKind("kMMD")
    scores, chosen, _ = select_batch(s.source_val.X, tr, s.target_train, metric)
    for i, x in enumerate(s.source_val.X):
        res, _ = select_and_classify(x, tr, s.target_train, metric, clf)
        assert res.chosen_class == tr.classes[chosen[i]]
        np.testing.assert_allclose(res.per_class_scores, scores[i], rtol=0, atol=1e-12)


# evaluation


def test_no_shift_bounds_coincide():
    data = _blobs(9, K=4, n=15)
    tr = _identity_set(5, range(4))
    clf = fit_classifier(data)
    accs = [evaluate(data, tr, data, MetricKind("kMMD"), clf, b).accuracy for b in ("selected", "oracle_upper", "none_lower")]
    assert accs[0] == accs[1] == accs[2]


def test_report_invariants():
    s = synthetic_splits(1.2, 3, n_target=20, n_adapt=10, n_val=10)
    tr = fit_class_transforms(s.target_train, s.source_adapt, "emd")
    clf = fit_classifier(s.target_train)
    for bound in ("selected", "oracle_upper", "none_lower"):
        rep = evaluate(s.source_val, tr, s.target_train, MetricKind("HoMM"), clf, bound)
        counts = np.bincount(s.source_val.y, minlength=10)
        np.testing.assert_array_equal(rep.confusion.sum(axis=1), counts)
        assert rep.accuracy == np.trace(rep.confusion) / counts.sum()
        assert rep.bound == bound and rep.class_count == 10


def test_evaluate_is_deterministic():
    s = synthetic_splits(0.8, 4, n_target=15, n_adapt=8, n_val=8)
    runs = []
    for _ in range(2):
        tr = fit_class_transforms(s.target_train, s.source_adapt, "sinkhorn_l1l2")
        clf = fit_classifier(s.target_train, "linear_softmax", seed=1)
        rep = evaluate(s.source_val, tr, s.target_train, MetricKind("kMMD"), clf)
        runs.append((rep.accuracy, rep.confusion.tobytes(), rep.predictions.tobytes()))
    assert runs[0] == runs[1]


def test_make_report_handles_absent_classes():
    rep = make_report([0, 0, 2], [0, 1, 2], "selected", 3)
    assert rep.accuracy == pytest.approx(2 / 3)
    assert np.isnan(rep.per_class_accuracy[1])
    np.testing.assert_array_equal(rep.per_class_accuracy[[0, 2]], [0.5, 1.0])


def test_synthetic_bounds_at_low_noise():
    s = synthetic_splits(0.4, 0)
    tr = fit_class_transforms(s.target_train, s.source_adapt, "sinkhorn")
    clf = fit_classifier(s.target_train)
    k = MetricKind("kMMD")
    selected = evaluate(s.source_val, tr, s.target_train, k, clf).accuracy
    lower = evaluate(s.source_val, tr, s.target_train, k, clf, "none_lower").accuracy
    assert lower <= 0.20
    assert selected > lower


def test_emd_upper_bound_without_noise():
    s = synthetic_splits(0.0, 0)
    tr = fit_class_transforms(s.target_train, s.source_adapt, "emd")
    clf = fit_classifier(s.target_train)
    assert evaluate(s.source_val, tr, s.target_train, MetricKind(), clf, "oracle_upper").accuracy >= 0.95


@pytest.mark.parametrize("kind", ["emd", "sinkhorn", "sinkhorn_lpl1", "coral"])
def test_upper_bound_dominates_selection(kind):
    for seed in range(20 if kind == "sinkhorn" else 3):
        b = [0.2, 0.9, 1.6][seed % 3]
        s = synthetic_splits(b, seed, n_target=30, n_adapt=15, n_val=10)
        tr = fit_class_transforms(s.target_train, s.source_adapt, kind)
        clf = fit_classifier(s.target_train)
        k = MetricKind("kMMD")
        upper = evaluate(s.source_val, tr, s.target_train, k, clf, "oracle_upper").accuracy
        assert upper >= evaluate(s.source_val, tr, s.target_train, k, clf).accuracy - 0.01
