"""Multiscale power features, the perceptron classifier and the evaluation harness."""

import csv
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .exceptions import InconsistentFeatureShape, InsufficientData, TraceTooShort
from .nn import AdamState, adam_step, backward, forward, init_params

logger = logging.getLogger(__name__)


def interval_bounds(n_rows, n_intervals):
    """Start/stop row of each interval: ``floor(t * W / T)`` boundaries."""
    if n_intervals < 1:
        raise ValueError(f"n_intervals must be >= 1, got {n_intervals}")
    if n_rows < n_intervals:
        raise TraceTooShort(f"trace has {n_rows} frames, fewer than {n_intervals} intervals")
    edges = (np.arange(n_intervals + 1) * n_rows) // n_intervals
    return edges[:-1], edges[1:]


@dataclass
class FeatureMatrix:
    values: np.ndarray    # (K, T)
    utterance_id: str = ""
    label: Optional[int] = None

    def flatten(self):
        """Row-major (component-major) vector of length K * T."""
        return self.values.reshape(-1)


def extract_features(trace, n_intervals, utterance_id="", label=None):
    """Mean squared projection per component over ``n_intervals`` contiguous intervals."""
    trace = np.asarray(trace, dtype=np.float64)
    if trace.ndim != 2:
        raise ValueError(f"trace must be 2-D (W, K), got shape {trace.shape}")
    starts, stops = interval_bounds(trace.shape[0], n_intervals)
    csum = np.vstack([np.zeros((1, trace.shape[1])), np.cumsum(trace * trace, axis=0)])
    power = (csum[stops] - csum[starts]) / (stops - starts)[:, None]
    return FeatureMatrix(power.T.copy(), utterance_id, label)


@dataclass
class ClassifierModel:
    params: object
    classes: np.ndarray
    mean: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    train_accuracy: float = float("nan")
    loss_history: List[float] = field(default_factory=list)

    def _prepare(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.params.input_dim:
            raise InconsistentFeatureShape(f"expected features of width {self.params.input_dim}, got {X.shape}")
        if self.mean is not None:
            X = (X - self.mean) / self.scale
        return X

    def predict_proba(self, X):
        return forward(self.params, self._prepare(X), head="softmax")[0]

    def predict(self, X):
        return self.classes[np.argmax(self.predict_proba(X), axis=1)]


def train_classifier(X, y, hidden_units=40, lr=1e-3, epochs=300, patience=30, batch_size=32,
                     standardize=True, seed=0, activation="tanh", min_delta=1e-4):
    """Fit a one-hidden-layer softmax perceptron with cross-entropy and Adam.

    Training stops early once the epoch-mean cross-entropy has not improved
    by ``min_delta`` for ``patience`` consecutive epochs.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InconsistentFeatureShape(f"features {X.shape} do not match {y.shape[0]} labels")
    classes, y_idx = np.unique(y, return_inverse=True)
    if classes.size < 2:
        raise InsufficientData("classifier needs at least two classes")
    rng = np.random.default_rng(seed)
    X_raw = X
    mean = scale = None
    if standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale < 1e-12] = 1.0
        X = (X - mean) / scale
    params = init_params(X.shape[1], classes.size, hidden_units, 1, rng, activation, "softmax")
    state = AdamState.for_params(params, lr)
    onehot = np.eye(classes.size)[y_idx]
    n = X.shape[0]
    best, stale = np.inf, 0
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            probs, tape = forward(params, X[idx])
            total += -np.sum(onehot[idx] * np.log(np.clip(probs, 1e-300, None)))
            grads, _ = backward(params, tape, (probs - onehot[idx]) / idx.size, wrt="logits")
            adam_step(params, grads, state)
        loss = total / n
        history.append(loss)
        if loss < best - min_delta:
            best, stale = loss, 0
        else:
            stale += 1
            if stale >= patience:
                break
    model = ClassifierModel(params, classes, mean, scale, loss_history=history)
    model.train_accuracy = float(np.mean(model.predict(X_raw) == y))
    return model


@dataclass
class FoldPlan:
    n_folds: int
    test_folds: List[np.ndarray]
    keys: List[tuple]

    def train_indices(self, fold):
        return np.sort(np.concatenate([f for i, f in enumerate(self.test_folds) if i != fold]))

    def splits(self):
        for i, test in enumerate(self.test_folds):
            yield self.train_indices(i), np.sort(test)


def make_fold_plan(labels, speakers=None, n_folds=5, seed=0):
    """Stratified k-fold assignment balanced over classes and, within a class, speakers.

    Utterances of each class are ordered by speaker (ties shuffled) and dealt
    round-robin, continuing the dealer position across classes so fold sizes
    stay within one of each other.
    """
    labels = np.asarray(labels)
    n = labels.size
    speakers = list(speakers) if speakers is not None else [""] * n
    if n_folds < 2:
        raise InsufficientData(f"need at least 2 folds, got {n_folds}")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(n_folds)]
    dealer = 0
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        if members.size < n_folds:
            raise InsufficientData(f"class {label!r} has {members.size} utterances, fewer than {n_folds} folds")
        tie = rng.permutation(members.size)
        order = sorted(range(members.size), key=lambda i: (speakers[members[i]], tie[i]))
        for i in order:
            folds[dealer % n_folds].append(int(members[i]))
            dealer += 1
    test_folds = [np.array(sorted(f), dtype=np.int64) for f in folds]
    keys = [(labels[i], speakers[i]) for i in range(n)]
    return FoldPlan(n_folds, test_folds, keys)


def write_feature_csv(path, features):
    """``utt,label,f_0..f_{K*T-1}`` with the component-major flatten order."""
    features = list(features)
    width = features[0].values.size if features else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utt", "label"] + [f"f_{i}" for i in range(width)])
        for fm in features:
            writer.writerow([fm.utterance_id, "" if fm.label is None else fm.label]
                            + [repr(float(v)) for v in fm.flatten()])
