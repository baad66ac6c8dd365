"""Linear-probe evaluation on frozen encoder features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .data import Dataset
from .models import Model
from .optim import Adam
from .tensor import Tape, Tensor, backward


class ProbeError(ValueError):
    """Raised for degenerate label sets or mismatched feature shapes."""


def extract_features(model: Model, images: np.ndarray,
                     batch_size: int = 256) -> np.ndarray:
    """Row i = flatten(encode(image i)); runs untaped, encoder untouched."""
    feats = []
    for lo in range(0, images.shape[0], batch_size):
        z = model.encode(images[lo:lo + batch_size])
        feats.append(z.data.reshape(z.shape[0], -1))
    return np.concatenate(feats) if feats else np.zeros((0, model.s * model.d))


@dataclass
class ProbeResult:
    accuracy: float
    per_class: np.ndarray
    class_counts: np.ndarray
    epochs_trained: int
    feature_dim: int
    checkpoint_id: str = ""


class LinearProbe:
    """Single linear layer trained with softmax cross-entropy and Adam.

    The instance keeps its weights between train() calls, so periodic
    probing warm-starts from the previous state.
    """

    def __init__(self, feature_dim: int, num_classes: int, lr: float = 1e-3):
        self.w = tt.parameter(np.zeros((feature_dim, num_classes)))
        self.b = tt.parameter(np.zeros(num_classes))
        self.opt = Adam([self.w, self.b], lr=lr)
        self.epochs_trained = 0

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.w.data + self.b.data

    def accuracy(self, features: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(np.argmax(self.logits(features), axis=1) == labels))

    def train(self, features: np.ndarray, labels: np.ndarray, epochs: int,
              rng: np.random.Generator, batch_size: int = 64) -> None:
        n, dim = features.shape
        onehot = np.zeros((n, self.b.shape[0]))
        onehot[np.arange(n), labels] = 1.0
        for _ in range(epochs):
            order = rng.permutation(n)
            for lo in range(0, n, batch_size):
                idx = order[lo:lo + batch_size]
                x = tt.constant(features[idx])
                y = tt.constant(onehot[idx])
                with Tape() as tape:
                    logits = tt.add(tt.matmul(x, self.w), self.b)
                    lse = tt.logsumexp(logits, axis=1)
                    true_logit = tt.sum(tt.mul(logits, y), axis=1)
                    loss = tt.mean(tt.sub(lse, true_logit))
                backward(loss, tape)
                self.opt.step()
                self.opt.zero_grad()
            self.epochs_trained += 1


def _check_labels(labels: np.ndarray) -> int:
    classes = np.unique(labels)
    if classes.size < 2:
        raise ProbeError(f"need at least 2 distinct labels, got {classes.size}")
    return int(labels.max()) + 1


def linear_probe(features: np.ndarray, labels: np.ndarray, epochs: int = 100,
                 seed: int = 0, eval_features: np.ndarray | None = None,
                 eval_labels: np.ndarray | None = None, lr: float = 1e-3,
                 checkpoint_id: str = "") -> ProbeResult:
    """Train a fresh linear classifier on frozen features and report held-out
    accuracy.

    Without an explicit eval set, an 80/20 split by seeded shuffle is used.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.all(np.isfinite(features)):
        raise ProbeError("features contain non-finite values")
    num_classes = _check_labels(labels)
    if eval_features is None:
        perm = np.random.default_rng([seed, 4]).permutation(features.shape[0])
        cut = int(round(0.8 * features.shape[0]))
        train_idx, eval_idx = perm[:cut], perm[cut:]
        eval_features, eval_labels = features[eval_idx], labels[eval_idx]
        features, labels = features[train_idx], labels[train_idx]
        num_classes = max(num_classes, _check_labels(labels))
    probe = LinearProbe(features.shape[1], num_classes, lr=lr)
    probe.train(features, labels, epochs, np.random.default_rng([seed, 5]))
    pred = np.argmax(probe.logits(eval_features), axis=1)
    per_class = np.zeros(num_classes)
    counts = np.zeros(num_classes)
    for c in range(num_classes):
        members = eval_labels == c
        counts[c] = members.sum()
        if counts[c]:
            per_class[c] = np.mean(pred[members] == c)
    accuracy = float((per_class * counts).sum() / counts.sum())
    return ProbeResult(accuracy=accuracy, per_class=per_class, class_counts=counts,
                       epochs_trained=epochs, feature_dim=features.shape[1],
                       checkpoint_id=checkpoint_id)


def make_probe_hook(dataset: Dataset, seed: int = 0, subset: int = 0,
                    epochs_per_call: int = 1, lr: float = 1e-3):
    """Training-accuracy probe hook for the train loop (warm-started).

    Each call extracts features of a fixed subset under the current frozen
    encoder, trains the shared probe for one epoch, and returns accuracy on
    those training features.
    """
    n = len(dataset)
    if subset and subset < n:
        idx = np.random.default_rng([seed, 6]).choice(n, size=subset, replace=False)
    else:
        idx = np.arange(n)
    images = dataset.images[idx]
    labels = dataset.labels[idx]
    _check_labels(labels)
    state = {"probe": None}
    rng = np.random.default_rng([seed, 7])

    def hook(model: Model, iteration: int) -> float:
        feats = extract_features(model, images)
        if state["probe"] is None:
            state["probe"] = LinearProbe(feats.shape[1], dataset.num_classes, lr=lr)
        probe = state["probe"]
        probe.train(feats, labels, epochs_per_call, rng)
        return probe.accuracy(feats, labels)

    return hook
