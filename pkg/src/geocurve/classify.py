"""Identification experiments over face descriptors: KNN, linear SVM and a small MLP."""

from __future__ import annotations

import csv
import json
import math
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .eikonal import solve_distance
from .errors import DegenerateTraining, EmptyGallery, GeocurveError
from .pipeline import FaceDescriptor, build_descriptor, face_distance

CLASSIFIERS = ("knn", "svm", "nn")


def thread_count() -> int:
    """Worker cap from ``GEOCURVE_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("GEOCURVE_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError("GEOCURVE_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


@dataclass(frozen=True)
class GalleryEntry:
    descriptor: FaceDescriptor
    subject_id: str
    split: str


class LabeledGallery:
    def __init__(self, entries):
        self.entries = list(entries)
        for e in self.entries:
            if e.split not in ("train", "test"):
                raise ValueError(f"unknown split {e.split!r}")
        train_ids = {e.descriptor.face_id for e in self.train}
        test_ids = {e.descriptor.face_id for e in self.test}
        if train_ids & test_ids:
            raise ValueError(f"descriptors in both splits: {sorted(train_ids & test_ids)}")
        missing = {e.subject_id for e in self.test} - {e.subject_id for e in self.train}
        if missing:
            raise ValueError(f"test subjects absent from train: {sorted(missing)}")

    @classmethod
    def from_descriptors(cls, descriptors, splits) -> "LabeledGallery":
        return cls(GalleryEntry(d, d.subject_id, s) for d, s in zip(descriptors, splits))

    @property
    def train(self) -> list[GalleryEntry]:
        return [e for e in self.entries if e.split == "train"]

    @property
    def test(self) -> list[GalleryEntry]:
        return [e for e in self.entries if e.split == "test"]

    @property
    def labels(self) -> list[str]:
        return sorted({e.subject_id for e in self.train})

    def templates(self) -> list[GalleryEntry]:
        """First train entry of every subject, in label order."""
        first: dict[str, GalleryEntry] = {}
        for e in self.train:
            first.setdefault(e.subject_id, e)
        return [first[s] for s in sorted(first)]


class DistanceCache:
    """Memoized ``face_distance``; each unordered pair is computed once, in face-id order."""

    def __init__(self, fn: Callable = face_distance):
        self.fn = fn
        self._table: dict[tuple[str, str], float] = {}

    def __call__(self, a: FaceDescriptor, b: FaceDescriptor) -> float:
        if a.face_id == b.face_id:
            return 0.0
        if b.face_id < a.face_id:
            a, b = b, a
        key = (a.face_id, b.face_id)
        if key not in self._table:
            self._table[key] = self.fn(a, b)
        return self._table[key]

    def prefetch(self, pairs, workers: int | None = None) -> None:
        todo = {}
        for a, b in pairs:
            if a.face_id == b.face_id:
                continue
            if b.face_id < a.face_id:
                a, b = b, a
            todo.setdefault((a.face_id, b.face_id), (a, b))
        todo = {k: v for k, v in todo.items() if k not in self._table}
        workers = workers or thread_count()
        items = sorted(todo.items())
        if workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(workers) as pool:
                values = list(pool.map(lambda kv: self.fn(*kv[1]), items))
        else:
            values = [self.fn(a, b) for _, (a, b) in items]
        for (key, _), v in zip(items, values):
            self._table[key] = v


def knn_vote(labels, distances, k: int) -> str:
    """Majority label of the ``k`` nearest; ties by mean distance, then label."""
    if not len(labels):
        raise EmptyGallery("no gallery entries to vote")
    if not 1 <= k <= len(labels):
        raise ValueError(f"k must be in [1, {len(labels)}], got {k}")
    d = np.asarray(distances, dtype=float)
    order = np.argsort(d, kind="stable")[:k]
    votes: dict[str, list[float]] = {}
    for i in order:
        votes.setdefault(labels[i], []).append(float(d[i]))
    return min(votes, key=lambda lab: (-len(votes[lab]), float(np.mean(votes[lab])), lab))


def knn_classify(gallery: LabeledGallery, probe: FaceDescriptor, k: int = 1,
                 distance: Callable = face_distance) -> str:
    train = gallery.train
    if not train:
        raise EmptyGallery("gallery has no train entries")
    return knn_vote([e.subject_id for e in train],
                    [distance(probe, e.descriptor) for e in train], k)


@dataclass
class SVMConfig:
    regularization: float = 1e-3
    epochs: int = 200
    step: float = 0.1
    decay: float = 0.05
    seed: int = 7


@dataclass
class NNConfig:
    hidden: int = 16
    epochs: int = 2000
    step: float = 0.05
    seed: int = 7


@dataclass
class ClassifierModel:
    """Trained model; ``params`` holds numpy arrays, ``loss_trace`` one loss per epoch."""

    kind: str
    labels: list[str]
    config: dict
    params: dict[str, np.ndarray]
    mean: np.ndarray
    scale: np.ndarray
    template_ids: list[str] = field(default_factory=list)
    loss_trace: list[float] = field(default_factory=list)

    def scores(self, X) -> np.ndarray:
        Z = (np.atleast_2d(np.asarray(X, dtype=float)) - self.mean) / self.scale
        if self.kind == "svm":
            return Z @ self.params["W"].T + self.params["b"]
        if self.kind == "nn":
            return _nn_forward(self.params, Z)[1]
        raise ValueError(f"unknown model kind {self.kind!r}")

    def predict(self, X) -> list[str]:
        return [self.labels[i] for i in np.argmax(self.scores(X), axis=1)]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "labels": self.labels,
            "config": self.config,
            "params": {k: v.tolist() for k, v in sorted(self.params.items())},
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "template_ids": self.template_ids,
            "loss_trace": self.loss_trace,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ClassifierModel":
        d = json.loads(text)
        return cls(d["kind"], d["labels"], d["config"],
                   {k: np.array(v, dtype=float) for k, v in d["params"].items()},
                   np.array(d["mean"]), np.array(d["scale"]), d["template_ids"],
                   d["loss_trace"])


def _standardize(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise DegenerateTraining("training features must be a nonempty 2D array")
    sd = X.std(axis=0)
    if np.all(sd == 0.0):
        raise DegenerateTraining("all training features are identical")
    mean = X.mean(axis=0)
    scale = np.where(sd > 0.0, sd, 1.0)
    return (X - mean) / scale, mean, scale


def _label_index(y):
    labels = sorted(set(y))
    if len(labels) < 2:
        raise DegenerateTraining("need at least 2 classes")
    pos = {lab: i for i, lab in enumerate(labels)}
    return labels, np.array([pos[v] for v in y])


def fit_svm(X, y, config: SVMConfig | None = None) -> ClassifierModel:
    """One-vs-rest linear hinge-loss classifiers by stochastic subgradient descent.

    Weights start at zero; the bias is not regularized. Samples are visited
    in a seeded permutation each epoch with step ``step / (1 + decay * epoch)``.
    The returned weights are the lowest-loss epoch's, and ``loss_trace`` holds
    that incumbent loss per epoch, so it never increases.
    """
    cfg = config or SVMConfig()
    Z, mean, scale = _standardize(X)
    labels, yi = _label_index(list(y))
    n, d = Z.shape
    C = len(labels)
    Y = np.where(yi[:, None] == np.arange(C)[None, :], 1.0, -1.0)  # (n, C)
    W = np.zeros((C, d))
    b = np.zeros(C)
    lam = cfg.regularization
    rng = np.random.default_rng(cfg.seed)
    trace = []
    best = (np.inf, W.copy(), b.copy())
    for epoch in range(cfg.epochs):
        eta = cfg.step / (1.0 + cfg.decay * epoch)
        for i in rng.permutation(n):
            active = Y[i] * (W @ Z[i] + b) < 1.0
            W *= 1.0 - eta * lam
            W[active] += eta * Y[i, active, None] * Z[i]
            b[active] += eta * Y[i, active]
        margins = Y * (Z @ W.T + b)
        loss = 0.5 * lam * float((W * W).sum()) + float(np.maximum(0.0, 1.0 - margins).mean())
        if loss < best[0]:
            best = (loss, W.copy(), b.copy())
        trace.append(best[0])
    return ClassifierModel("svm", labels, asdict(cfg), {"W": best[1], "b": best[2]}, mean, scale,
                           loss_trace=trace)


def _nn_forward(params, Z):
    H = np.tanh(Z @ params["W1"] + params["b1"])
    return H, H @ params["W2"] + params["b2"]


def _softmax(S):
    S = S - S.max(axis=1, keepdims=True)
    e = np.exp(S)
    return e / e.sum(axis=1, keepdims=True)


def nn_loss_and_grad(params, Z, yi):
    """Mean cross-entropy of the tanh MLP and its gradient with respect to ``params``."""
    n = len(Z)
    H, S = _nn_forward(params, Z)
    P = _softmax(S)
    loss = -float(np.mean(np.log(P[np.arange(n), yi])))
    G = P.copy()
    G[np.arange(n), yi] -= 1.0
    G /= n
    dH = (G @ params["W2"].T) * (1.0 - H * H)
    grads = {"W2": H.T @ G, "b2": G.sum(axis=0), "W1": Z.T @ dH, "b1": dH.sum(axis=0)}
    return loss, grads


def init_nn(n_in: int, n_out: int, hidden: int, seed: int) -> dict[str, np.ndarray]:
    if hidden < 1:
        raise ValueError("hidden size must be >= 1")
    rng = np.random.default_rng(seed)
    return {
        "W1": rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, hidden)),
        "b1": np.zeros(hidden),
        "W2": rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(hidden, n_out)),
        "b2": np.zeros(n_out),
    }


def fit_nn(X, y, config: NNConfig | None = None) -> ClassifierModel:
    """Single-hidden-layer tanh network, softmax output, full-batch gradient descent."""
    cfg = config or NNConfig()
    if cfg.hidden < 1:
        raise ValueError("hidden size must be >= 1")
    Z, mean, scale = _standardize(X)
    labels, yi = _label_index(list(y))
    params = init_nn(Z.shape[1], len(labels), cfg.hidden, cfg.seed)
    trace = []
    for _ in range(cfg.epochs):
        loss, grads = nn_loss_and_grad(params, Z, yi)
        trace.append(loss)
        for k in params:
            params[k] = params[k] - cfg.step * grads[k]
    return ClassifierModel("nn", labels, asdict(cfg), params, mean, scale, loss_trace=trace)


def template_features(templates, probes, distance: Callable = face_distance) -> np.ndarray:
    """Row per probe: its face distance to each template descriptor."""
    return np.array([[distance(p, t) for t in templates] for p in probes], dtype=float)


def _train_on_gallery(gallery, fit, config, distance):
    templates = [e.descriptor for e in gallery.templates()]
    train = gallery.train
    X = template_features(templates, [e.descriptor for e in train], distance)
    model = fit(X, [e.subject_id for e in train], config)
    model.template_ids = [t.face_id for t in templates]
    return model, templates


def train_svm(gallery: LabeledGallery, config: SVMConfig | None = None,
              distance: Callable = face_distance) -> ClassifierModel:
    """Linear SVM over distances to one template per train subject."""
    return _train_on_gallery(gallery, fit_svm, config, distance)[0]


def train_nn(gallery: LabeledGallery, config: NNConfig | None = None,
             distance: Callable = face_distance) -> ClassifierModel:
    return _train_on_gallery(gallery, fit_nn, config, distance)[0]


@dataclass
class Evaluation:
    rate: float
    predictions: dict[str, str]
    confusion: dict[str, dict[str, int]]

    def to_dict(self) -> dict:
        return {"rate": self.rate, "predictions": self.predictions, "confusion": self.confusion}


def evaluate_predictions(truth: dict[str, str], predictions: dict[str, str]) -> Evaluation:
    """Recognition rate plus per-subject confusion counts (truth -> predicted -> count)."""
    if not truth:
        raise EmptyGallery("no test probes to evaluate")
    correct = sum(predictions[fid] == lab for fid, lab in truth.items())
    pairs = Counter((truth[f], predictions[f]) for f in truth)
    confusion: dict[str, dict[str, int]] = {}
    for (t, p), c in sorted(pairs.items()):
        confusion.setdefault(t, {})[p] = c
    return Evaluation(correct / len(truth), {f: predictions[f] for f in sorted(truth)}, confusion)


def evaluate(gallery: LabeledGallery, classifier, distance: Callable = face_distance,
             k: int = 1) -> Evaluation:
    """Score test probes with ``"knn"``, a trained model, or any ``descriptor -> label`` callable."""
    test = gallery.test
    if not test:
        raise EmptyGallery("gallery has no test entries")
    probes = [e.descriptor for e in test]
    if classifier == "knn":
        pred = [knn_classify(gallery, p, k, distance) for p in probes]
    elif isinstance(classifier, ClassifierModel):
        by_id = {e.descriptor.face_id: e.descriptor for e in gallery.train}
        templates = [by_id[t] for t in classifier.template_ids]
        pred = classifier.predict(template_features(templates, probes, distance))
    elif callable(classifier):
        pred = [classifier(p) for p in probes]
    else:
        raise ValueError(f"unsupported classifier {classifier!r}")
    truth = {e.descriptor.face_id: e.subject_id for e in test}
    return evaluate_predictions(truth, {p.face_id: lab for p, lab in zip(probes, pred)})


@dataclass
class FaceRecord:
    """Mesh plus labels, the input unit of a sweep."""

    face_id: str
    subject_id: str
    split: str
    mesh: object
    reference: int


@dataclass
class SweepResult:
    rows: list[tuple[int, str, float | None]]
    errors: dict[str, str] = field(default_factory=dict)
    details: dict[str, dict] = field(default_factory=dict)

    def rate(self, K: int, classifier: str) -> float | None:
        for k, c, r in self.rows:
            if k == K and c == classifier:
                return r
        raise KeyError((K, classifier))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["K", "classifier", "rate"])
            for K, c, r in self.rows:
                w.writerow([K, c, "failed" if r is None else f"{r:.9g}"])

    def write_svg(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(sweep_svg(self.rows))


def parse_k_range(text: str) -> list[int]:
    """``"1:7"`` (inclusive) or ``"1,3,5"``."""
    text = text.strip()
    if ":" in text:
        lo, hi = (int(x) for x in text.split(":", 1))
        ks = list(range(lo, hi + 1))
    else:
        ks = [int(x) for x in text.split(",") if x.strip()]
    return validate_k_range(ks)


def validate_k_range(ks) -> list[int]:
    ks = [int(k) for k in ks]
    if not ks:
        raise ValueError("K range is empty")
    bad = [k for k in ks if not 0 < k <= 12]
    if bad:
        raise ValueError(f"K values must lie in (0, 12], got {bad}")
    return ks


def curve_count_sweep(records: list[FaceRecord], k_range, classifiers=CLASSIFIERS, *,
                      M: int = 100, knn_k: int = 1, svm: SVMConfig | None = None,
                      nn: NNConfig | None = None, progress: Callable | None = None) -> SweepResult:
    """Recognition rate for every (K, classifier) cell.

    Distance fields are computed once per face and reused for every K. A cell
    whose descriptors or training fail is recorded as ``None`` with its error.
    """
    ks = validate_k_range(k_range)
    classifiers = list(classifiers)
    for c in classifiers:
        if c not in CLASSIFIERS:
            raise ValueError(f"unknown classifier {c!r}")
    fields = {r.face_id: solve_distance(r.mesh, r.reference) for r in records}
    result = SweepResult(rows=[])
    for K in ks:
        try:
            descs = [build_descriptor(r.mesh, r.reference, K, M, face_id=r.face_id,
                                      subject_id=r.subject_id, field=fields[r.face_id])
                     for r in records]
            gallery = LabeledGallery.from_descriptors(descs, [r.split for r in records])
        except GeocurveError as exc:
            for c in classifiers:
                result.rows.append((K, c, None))
                result.errors[f"{K}/{c}"] = f"{getattr(exc, 'stage', 'descriptor')}: {exc}"
            continue
        cache = DistanceCache()
        templates = [e.descriptor for e in gallery.templates()]
        train = [e.descriptor for e in gallery.train]
        test = [e.descriptor for e in gallery.test]
        pairs = [(p, t) for p in test for t in train]
        if any(c != "knn" for c in classifiers):
            pairs += [(p, t) for p in train for t in templates]
        cache.prefetch(pairs)
        for c in classifiers:
            try:
                if c == "knn":
                    ev = evaluate(gallery, "knn", cache, knn_k)
                elif c == "svm":
                    ev = evaluate(gallery, train_svm(gallery, svm, cache), cache)
                else:
                    ev = evaluate(gallery, train_nn(gallery, nn, cache), cache)
            except (GeocurveError, ValueError, ArithmeticError) as exc:
                result.rows.append((K, c, None))
                result.errors[f"{K}/{c}"] = str(exc)
                continue
            result.rows.append((K, c, ev.rate))
            result.details[f"{K}/{c}"] = ev.to_dict()
            if progress is not None:
                progress(K, c, ev.rate)
    return result


_COLORS = {"knn": "#1f77b4", "svm": "#d62728", "nn": "#2ca02c"}


def sweep_svg(rows, width: int = 480, height: int = 320) -> str:
    """Self-contained SVG line chart of rate against K, one polyline per classifier."""
    ks = sorted({k for k, _, _ in rows})
    names = [c for c in CLASSIFIERS if any(r[1] == c for r in rows)]
    names += sorted({r[1] for r in rows} - set(names))
    left, right, top, bottom = 50, 90, 20, 40
    pw, ph = width - left - right, height - top - bottom
    k0, k1 = (ks[0], ks[-1]) if ks else (0, 1)
    span = max(k1 - k0, 1)

    def x(k):
        return left + pw * (k - k0) / span

    def y(r):
        return top + ph * (1.0 - r)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for k in ks:
        out.append(f'<text x="{x(k):.2f}" y="{top + ph + 16}" font-size="11" '
                   f'text-anchor="middle">{k}</text>')
    for r in (0.0, 0.25, 0.5, 0.75, 1.0):
        out.append(f'<text x="{left - 6}" y="{y(r) + 4:.2f}" font-size="11" '
                   f'text-anchor="end">{r:.2f}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 6}" font-size="12" '
               'text-anchor="middle">number of curves K</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.2f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2:.2f})">recognition rate</text>')
    for i, name in enumerate(names):
        color = _COLORS.get(name, "#555555")
        pts = [(k, r) for k, c, r in sorted(rows) if c == name and r is not None]
        if pts:
            coords = " ".join(f"{x(k):.2f},{y(r):.2f}" for k, r in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                       f'points="{coords}"/>')
            for k, r in pts:
                out.append(f'<circle cx="{x(k):.2f}" cy="{y(r):.2f}" r="3" fill="{color}"/>')
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly + 4}" font-size="12">{name.upper()}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
