import xml.dom.minidom

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geocurve import classify as C
from geocurve.errors import DegenerateTraining, EmptyGallery, GeocurveError
from geocurve.pipeline import build_descriptor, face_distance


@pytest.fixture(scope="module")
def gallery(small_faces):
    descs = [build_descriptor(f.mesh, f.apex_index, 3, 64, face_id=f.face_id,
                              subject_id=f.subject_id) for f in small_faces]
    return C.LabeledGallery.from_descriptors(descs, [f.split for f in small_faces])


@pytest.fixture(scope="module")
def cache():
    return C.DistanceCache()


def smoothed(trace, window=10):
    t = np.asarray(trace)
    return np.convolve(t, np.ones(window) / window, mode="valid")


def test_gallery_splits(gallery):
    assert len(gallery.train) == 6 and len(gallery.test) == 3
    assert gallery.labels == ["s00", "s01", "s02"]
    assert [e.descriptor.face_id for e in gallery.templates()] == ["s00_e0", "s01_e0", "s02_e0"]


def test_gallery_invariants(gallery):
    e = gallery.train[0]
    with pytest.raises(ValueError):
        C.LabeledGallery([e, C.GalleryEntry(e.descriptor, e.subject_id, "test")])
    lone = C.GalleryEntry(gallery.test[0].descriptor, "nobody", "test")
    with pytest.raises(ValueError):
        C.LabeledGallery([*gallery.train, lone])


def test_cache_is_symmetric_and_memoized(gallery):
    calls = []

    def fn(a, b):
        calls.append((a.face_id, b.face_id))
        return face_distance(a, b)

    cache = C.DistanceCache(fn)
    a, b = gallery.train[0].descriptor, gallery.train[3].descriptor
    assert cache(a, b) == cache(b, a)
    assert len(calls) == 1 and calls[0][0] < calls[0][1]
    assert cache(a, a) == 0.0


def test_knn_self_consistency(gallery, cache):
    for e in gallery.train:
        assert C.knn_classify(gallery, e.descriptor, 1, cache) == e.subject_id


def test_knn_all_neighbors_is_global_majority():
    labels = ["a", "b", "b", "c", "b", "a"]
    assert C.knn_vote(labels, [0.1, 0.9, 0.8, 0.2, 0.7, 0.3], k=6) == "b"


def test_knn_tie_breaks():
    # one vote each: smallest mean distance wins
    assert C.knn_vote(["a", "b"], [0.5, 0.4], k=2) == "b"
    # equal counts and equal means: lexicographic label
    assert C.knn_vote(["b", "a"], [0.5, 0.5], k=2) == "a"
    assert C.knn_vote(["b", "a", "a", "b"], [0.1, 0.2, 0.3, 0.4], k=4) == "a"


def test_knn_argument_checks():
    with pytest.raises(EmptyGallery):
        C.knn_vote([], [], 1)
    with pytest.raises(ValueError):
        C.knn_vote(["a"], [0.0], 2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=5, max_size=5),
       st.floats(1e-3, 1e3), st.integers(1, 5))
def test_knn_invariant_under_positive_scaling(dists, scale, k):
    labels = ["a", "b", "a", "c", "b"]
    assert C.knn_vote(labels, dists, k) == C.knn_vote(labels, [d * scale for d in dists], k)


def test_knn_recognition_on_small_fixture(gallery, cache):
    ev = C.evaluate(gallery, "knn", cache)
    assert ev.rate == 1.0
    assert sum(sum(v.values()) for v in ev.confusion.values()) == len(gallery.test)


def test_evaluate_echo_and_constant(gallery, cache):
    lookup = {e.descriptor.face_id: e.subject_id for e in gallery.test}
    assert C.evaluate(gallery, lambda p: lookup[p.face_id]).rate == 1.0
    wrong = C.evaluate(gallery, lambda p: "nobody")
    assert wrong.rate <= 1 / len(gallery.labels)
    assert wrong.confusion["s00"] == {"nobody": 1}


def test_evaluate_permutation_invariant(gallery, cache):
    perm = C.LabeledGallery(list(reversed(gallery.entries)))
    a, b = C.evaluate(gallery, "knn", cache), C.evaluate(perm, "knn", cache)
    assert a.rate == b.rate and a.predictions == b.predictions


def test_evaluate_needs_test_entries(gallery):
    with pytest.raises(EmptyGallery):
        C.evaluate(C.LabeledGallery(gallery.train), "knn")


def two_blobs(seed=0):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(-2, 0.5, size=(20, 3)), rng.normal(2, 0.5, size=(20, 3))])
    return X, ["neg"] * 20 + ["pos"] * 20


def test_svm_separable():
    X, y = two_blobs()
    m = C.fit_svm(X, y)
    assert m.predict(X) == y


def test_svm_duplicate_columns_share_weights():
    X, y = two_blobs(1)
    X = np.column_stack([X, X[:, 0]])
    W = C.fit_svm(X, y).params["W"]
    assert np.max(np.abs(W[:, 0] - W[:, 3])) < 1e-6


def test_svm_deterministic():
    X, y = two_blobs(2)
    assert C.fit_svm(X, y).to_json() == C.fit_svm(X, y).to_json()


def test_svm_loss_trend():
    X, y = two_blobs(3)
    X = X + np.random.default_rng(0).normal(0, 1.5, size=X.shape)
    s = smoothed(C.fit_svm(X, y).loss_trace)
    assert np.all(np.diff(s) <= 1e-12)


def test_degenerate_training():
    with pytest.raises(DegenerateTraining):
        C.fit_svm(np.ones((4, 2)), ["a", "a", "b", "b"])
    with pytest.raises(DegenerateTraining):
        C.fit_nn(np.ones((4, 2)), ["a", "a", "b", "b"])
    with pytest.raises(DegenerateTraining):
        C.fit_svm(np.random.default_rng(0).normal(size=(4, 2)), ["a"] * 4)


def test_nn_hidden_size_checked():
    X, y = two_blobs()
    with pytest.raises(ValueError):
        C.fit_nn(X, y, C.NNConfig(hidden=0))


def test_nn_solves_xor():
    X = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], dtype=float)
    y = ["same", "same", "diff", "diff"]
    m = C.fit_nn(X, y, C.NNConfig(hidden=8, epochs=5000))
    assert m.predict(X) == y


@pytest.mark.parametrize("seed", range(3))
def test_nn_gradient_check(seed):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(12, 4))
    yi = rng.integers(0, 3, size=12)
    params = C.init_nn(4, 3, 5, seed)
    _, grads = C.nn_loss_and_grad(params, Z, yi)
    eps = 1e-6
    worst = 0.0
    for name, P in params.items():
        for idx in np.ndindex(*P.shape):
            orig = P[idx]
            P[idx] = orig + eps
            up = C.nn_loss_and_grad(params, Z, yi)[0]
            P[idx] = orig - eps
            dn = C.nn_loss_and_grad(params, Z, yi)[0]
            P[idx] = orig
            fd = (up - dn) / (2 * eps)
            worst = max(worst, abs(fd - grads[name][idx]) / max(abs(fd), 1e-3))
    assert worst < 1e-4


def test_nn_loss_trend():
    X, y = two_blobs(4)
    assert np.all(np.diff(smoothed(C.fit_nn(X, y).loss_trace)) <= 1e-12)


def test_models_on_gallery(gallery, cache):
    for train in (C.train_svm, C.train_nn):
        model = train(gallery, None, cache)
        assert model.template_ids == ["s00_e0", "s01_e0", "s02_e0"]
        ev = C.evaluate(gallery, model, cache)
        assert ev.rate == 1.0
        again = C.ClassifierModel.from_json(model.to_json())
        assert again.to_json() == model.to_json()
        assert C.evaluate(gallery, again, cache).predictions == ev.predictions


def test_svm_rate_reproducible(gallery, cache):
    a = C.evaluate(gallery, C.train_svm(gallery, None, cache), cache)
    b = C.evaluate(gallery, C.train_svm(gallery, None, cache), cache)
    assert a.to_dict() == b.to_dict()


def test_k_range_parsing():
    assert C.parse_k_range("1:7") == [1, 2, 3, 4, 5, 6, 7]
    assert C.parse_k_range("2,5") == [2, 5]
    for bad in ("", "0:3", "5:13"):
        with pytest.raises(ValueError):
            C.parse_k_range(bad)


def records(faces):
    return [C.FaceRecord(f.face_id, f.subject_id, f.split, f.mesh, f.apex_index) for f in faces]


def test_sweep_table(tmp_path, small_faces):
    res = C.curve_count_sweep(records(small_faces), [1, 2], M=48)
    assert [(k, c) for k, c, _ in res.rows] == [(1, "knn"), (1, "svm"), (1, "nn"),
                                                 (2, "knn"), (2, "svm"), (2, "nn")]
    assert all(0.0 <= r <= 1.0 for _, _, r in res.rows)
    res.write_csv(tmp_path / "sweep.csv")
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "K,classifier,rate" and len(lines) == 7
    res.write_svg(tmp_path / "sweep.svg")
    doc = xml.dom.minidom.parse(str(tmp_path / "sweep.svg"))
    assert len(doc.getElementsByTagName("polyline")) == 3


def test_sweep_rejects_empty_range(small_faces):
    with pytest.raises(ValueError):
        C.curve_count_sweep(records(small_faces), [])


def test_sweep_marks_failed_cells(monkeypatch, small_faces):
    real = C.build_descriptor

    def flaky(mesh, reference, K, *args, **kw):
        if K == 2:
            raise GeocurveError("forced failure")
        return real(mesh, reference, K, *args, **kw)

    monkeypatch.setattr(C, "build_descriptor", flaky)
    res = C.curve_count_sweep(records(small_faces), [1, 2], ["knn"], M=32)
    assert res.rate(1, "knn") is not None and res.rate(2, "knn") is None
    assert "forced failure" in res.errors["2/knn"]


def test_thread_count(monkeypatch):
    monkeypatch.setenv("GEOCURVE_THREADS", "3")
    assert C.thread_count() == 3
    monkeypatch.setenv("GEOCURVE_THREADS", "0")
    assert C.thread_count() >= 1
