"""Patch classification: flower / non-flower and 3-class orientation.

The classifier seam is duck-typed: anything with
``classify_features(features) -> probability vector`` plugs in.  The reference
implementation is a multinomial logistic model trained by full-batch gradient
descent with the softmax / cross-entropy machinery below.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

_CLASSIFIER_MAGIC = b"PCL1"

# default stable hyperparameters for the reference trainer; the training loss
# is non-increasing on the training set at this learning rate
DEFAULT_EPOCHS = 300
DEFAULT_LEARNING_RATE = 0.2


class DegenerateDatasetError(ValueError):
    """Training data contains fewer than two classes."""


class OrientationClass(IntEnum):
    """Flower facing direction relative to the observing camera."""

    FACING_CAMERA = 0   # yaw offset 0
    FACING_LEFT = 1     # yaw offset +yaw_magnitude
    FACING_RIGHT = 2    # yaw offset -yaw_magnitude


# magnitude of the yaw offset separating the left/right orientation classes
ORIENTATION_YAW = np.deg2rad(30.0)


def orientation_yaw_offset(cls: OrientationClass,
                           yaw_magnitude: float = ORIENTATION_YAW) -> float:
    if yaw_magnitude <= 0:
        raise ValueError("yaw magnitude must be positive")
    return {OrientationClass.FACING_CAMERA: 0.0,
            OrientationClass.FACING_LEFT: +yaw_magnitude,
            OrientationClass.FACING_RIGHT: -yaw_magnitude}[OrientationClass(cls)]


def softmax(z) -> np.ndarray:
    """Probability vector from logits, max-subtracted for stability."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(p, q) -> float:
    """-sum_k log(p_k) q_k with p clamped away from zero."""
    p = np.maximum(np.asarray(p, dtype=float), 1e-300)
    q = np.asarray(q, dtype=float)
    return float(-(np.log(p) * q).sum())


def loss_gradient(p, q) -> np.ndarray:
    """Gradient of the cross entropy w.r.t. the logits: p - q, each entry in [-1, 1]."""
    return np.asarray(p, dtype=float) - np.asarray(q, dtype=float)


@dataclass
class LinearPatchClassifier:
    """Multinomial logistic model over standardized features.

    weights is (num_classes, num_features + 1); the last column is the bias.
    """

    weights: np.ndarray
    feat_mean: np.ndarray
    feat_scale: np.ndarray
    training_losses: list = field(default_factory=list, repr=False)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def num_features(self) -> int:
        return self.weights.shape[1] - 1

    def _standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.feat_mean) / self.feat_scale

    def classify_features(self, features) -> np.ndarray:
        """Probability vector for one feature vector."""
        x = self._standardize(np.asarray(features, dtype=float))
        z = self.weights @ np.append(x, 1.0)
        return softmax(z)

    def classify_many(self, features: np.ndarray) -> np.ndarray:
        x = self._standardize(np.asarray(features, dtype=float))
        x1 = np.hstack([x, np.ones((x.shape[0], 1))])
        return softmax(x1 @ self.weights.T)


def train_reference_classifier(dataset, epochs: int = DEFAULT_EPOCHS,
                               learning_rate: float = DEFAULT_LEARNING_RATE,
                               seed: int = 0,
                               num_classes: int | None = None) -> LinearPatchClassifier:
    """Full-batch gradient descent on the mean cross entropy.

    dataset is a list of (feature_vector, integer label) or an (X, y) pair.
    Deterministic given the seed.
    """
    if isinstance(dataset, tuple) and len(dataset) == 2:
        X = np.asarray(dataset[0], dtype=float)
        y = np.asarray(dataset[1], dtype=int)
    else:
        X = np.asarray([np.asarray(f, dtype=float) for f, _ in dataset])
        y = np.asarray([lab for _, lab in dataset], dtype=int)
    if X.ndim != 2 or X.shape[0] != y.size or X.shape[0] == 0:
        raise ValueError("bad dataset shapes")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    classes_present = np.unique(y)
    if classes_present.size < 2:
        raise DegenerateDatasetError("need at least two classes in the data")
    K = int(num_classes if num_classes is not None else y.max() + 1)

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Xs = (X - mean) / scale
    X1 = np.hstack([Xs, np.ones((Xs.shape[0], 1))])
    Q = np.zeros((y.size, K))
    Q[np.arange(y.size), y] = 1.0

    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, 0.01, size=(K, X1.shape[1]))
    losses = []
    for _ in range(epochs):
        P = softmax(X1 @ W.T)
        losses.append(float(-(np.log(np.maximum(P, 1e-300)) * Q).sum() / y.size))
        G = (P - Q) / y.size
        W -= learning_rate * (G.T @ X1)
    return LinearPatchClassifier(weights=W, feat_mean=mean, feat_scale=scale,
                                 training_losses=losses)


# ---------------------------------------------------------------------------
# feature recipe

FEATURE_NAMES = (
    "mean_r", "mean_g", "mean_b", "std_r", "std_g", "std_b",
    "area", "aspect_ratio", "fill_ratio", "warm_centroid_dx", "warm_centroid_dy",
)


def extract_patch_features(image, patch) -> np.ndarray:
    """Fixed feature recipe for the reference classifiers.

    Color statistics are taken over the full rectangular patch (not the mask):
    per-channel mean and std scaled to [0, 1], the component pixel area, the
    box aspect ratio, the mask fill ratio, and the offset of the warm-color
    (r - b weighted) centroid from the box center, normalized by box size.
    The centroid offset is what separates left- from right-facing flowers,
    whose silhouettes are mirror images.
    """
    rgb = np.asarray(getattr(image, "rgb", image))
    box = rgb[patch.y0:patch.y1, patch.x0:patch.x1].astype(float)
    h, w = box.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("patch outside image bounds")
    means = box.reshape(-1, 3).mean(axis=0) / 255.0
    stds = box.reshape(-1, 3).std(axis=0) / 255.0
    aspect = w / h
    fill = patch.area / (w * h)

    warm = np.clip(box[:, :, 0] - box[:, :, 2], 0.0, None)
    total = warm.sum()
    if total > 1e-9:
        vs, us = np.mgrid[0:h, 0:w]
        cu = (warm * us).sum() / total
        cv = (warm * vs).sum() / total
        dx = (cu - (w - 1) / 2.0) / w
        dy = (cv - (h - 1) / 2.0) / h
    else:
        dx = dy = 0.0
    return np.array([*means, *stds, float(patch.area), aspect, fill, dx, dy])


def classify_patch(classifier, image, patch):
    """(label, probability) for one patch; ties break to the lower label."""
    dist = classifier.classify_features(extract_patch_features(image, patch))
    label = int(np.argmax(dist))
    return label, float(dist[label])


def classify_orientation(classifier, image, patch):
    """(OrientationClass, full distribution); ties break to the lower class."""
    dist = classifier.classify_features(extract_patch_features(image, patch))
    return OrientationClass(int(np.argmax(dist))), dist


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ClassificationMetrics:
    """Per-class precision/recall from a confusion matrix.

    confusion[actual, predicted] holds counts. precision/recall entries are
    None where the denominator is zero (absent, not reported as 0).
    """

    confusion: np.ndarray
    precision: tuple
    recall: tuple
    support: tuple

    @property
    def num_classes(self) -> int:
        return self.confusion.shape[0]


def compute_metrics(predictions, num_classes: int | None = None) -> ClassificationMetrics:
    """Metrics from (predicted, actual) label pairs."""
    preds = [(int(p), int(a)) for p, a in predictions]
    if not preds:
        raise ValueError("no predictions")
    K = num_classes if num_classes is not None else max(max(p, a) for p, a in preds) + 1
    confusion = np.zeros((K, K), dtype=int)
    for p, a in preds:
        confusion[a, p] += 1
    precision, recall, support = [], [], []
    for k in range(K):
        tp = confusion[k, k]
        fp = confusion[:, k].sum() - tp
        fn = confusion[k, :].sum() - tp
        precision.append(tp / (tp + fp) if tp + fp > 0 else None)
        recall.append(tp / (tp + fn) if tp + fn > 0 else None)
        support.append(int(confusion[k, :].sum()))
    return ClassificationMetrics(confusion=confusion, precision=tuple(precision),
                                 recall=tuple(recall), support=tuple(support))


def metrics_from_counts(counts) -> ClassificationMetrics:
    """Metrics directly from a confusion matrix (rows actual, cols predicted)."""
    confusion = np.asarray(counts, dtype=int)
    pairs = []
    for a in range(confusion.shape[0]):
        for p in range(confusion.shape[1]):
            pairs.extend([(p, a)] * confusion[a, p])
    return compute_metrics(pairs, num_classes=confusion.shape[0])


def _pct(x) -> str:
    return "-" if x is None else f"{100.0 * x:.1f}%"


def format_metrics_table(metrics: ClassificationMetrics, class_names=None) -> str:
    names = class_names or [f"class{k}" for k in range(metrics.num_classes)]
    lines = [f"{'class':<12} {'precision':>10} {'recall':>10} {'support':>8}"]
    for k, name in enumerate(names):
        lines.append(f"{name:<12} {_pct(metrics.precision[k]):>10} "
                     f"{_pct(metrics.recall[k]):>10} {metrics.support[k]:>8}")
    return "\n".join(lines)


def write_metrics_csv(metrics: ClassificationMetrics, path, class_names=None) -> None:
    names = class_names or [f"class{k}" for k in range(metrics.num_classes)]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "precision", "recall", "support"])
        for k, name in enumerate(names):
            prec = "" if metrics.precision[k] is None else f"{metrics.precision[k]:.6f}"
            rec = "" if metrics.recall[k] is None else f"{metrics.recall[k]:.6f}"
            writer.writerow([name, prec, rec, metrics.support[k]])


# ---------------------------------------------------------------------------
# persistence


def save_classifier(clf: LinearPatchClassifier, path) -> None:
    """Little-endian binary: magic, K, D, then weights, feature mean, feature scale."""
    with open(path, "wb") as f:
        f.write(_CLASSIFIER_MAGIC)
        f.write(struct.pack("<II", clf.num_classes, clf.num_features))
        f.write(clf.weights.astype("<f8").tobytes())
        f.write(clf.feat_mean.astype("<f8").tobytes())
        f.write(clf.feat_scale.astype("<f8").tobytes())


def load_classifier(path) -> LinearPatchClassifier:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _CLASSIFIER_MAGIC:
            raise ValueError(f"not a classifier file (magic {magic!r})")
        K, D = struct.unpack("<II", f.read(8))
        W = np.frombuffer(f.read(8 * K * (D + 1)), dtype="<f8").reshape(K, D + 1)
        mean = np.frombuffer(f.read(8 * D), dtype="<f8")
        scale = np.frombuffer(f.read(8 * D), dtype="<f8")
    return LinearPatchClassifier(weights=W.copy(), feat_mean=mean.copy(),
                                 feat_scale=scale.copy())
