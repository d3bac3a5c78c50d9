"""High-level activity classification from label histograms and occlusion profiles."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .learning import solve_restricted_qp
from .streams import ObjectTrack


def histogram_features(activity_labels: Sequence[int], affordance_labels: Sequence[int],
                       n_activity: int, n_affordance: int,
                       weights_activity=None, weights_affordance=None) -> np.ndarray:
    """Normalized sub-activity histogram followed by the affordance histogram.

    Each block sums to 1, or is all zeros when it has no instances. Optional
    weights (e.g. segment lengths) replace unit counts.
    """
    def hist(values, n, wts):
        values = np.asarray(values, dtype=int).ravel()
        h = np.bincount(values, weights=None if wts is None else np.asarray(wts, float).ravel(),
                        minlength=n).astype(float)
        total = h.sum()
        return h / total if total > 0 else h

    return np.concatenate([hist(activity_labels, n_activity, weights_activity),
                           hist(affordance_labels, n_affordance, weights_affordance)])


def occlusion_features(tracks: Sequence[ObjectTrack], n_bins: int = 10,
                       num_frames: int | None = None) -> np.ndarray:
    """Fraction of objects occluded at some frame of each of ``n_bins`` uniform time bins."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if not tracks:
        return np.zeros(n_bins)
    T = num_frames if num_frames is not None else max(t.end for t in tracks) + 1
    edges = np.linspace(0, T, n_bins + 1)
    out = np.zeros(n_bins)
    for t in tracks:
        frames = t.start + np.flatnonzero(t.occluded)
        bins = np.clip(np.searchsorted(edges, frames, side="right") - 1, 0, n_bins - 1)
        out[np.unique(bins)] += 1
    return out / len(tracks)


@dataclass
class LinearClassifier:
    """One weight row per class; the last column multiplies a constant 1."""

    weights: np.ndarray
    classes: list

    def scores(self, x) -> np.ndarray:
        x = np.append(np.asarray(x, dtype=float), 1.0)
        return self.weights @ x

    def classify(self, x):
        return self.classes[int(np.argmax(self.scores(x)))]


def _binary_svm(X: np.ndarray, y: np.ndarray, C: float, epsilon: float, max_iterations: int):
    """1-slack cutting-plane linear SVM; y in {-1, +1}."""
    n = len(X)
    cuts = []
    w = np.zeros(X.shape[1])
    xi = 0.0
    for _ in range(max_iterations):
        margins = y * (X @ w)
        active = margins < 1.0
        g = (y[active, None] * X[active]).sum(axis=0) / n
        loss = active.sum() / n
        if loss - w @ g - xi <= epsilon:
            break
        cuts.append((g, loss))
        w, xi, _, _ = solve_restricted_qp(cuts, C)
    return w


def train_highlevel(examples: Sequence[tuple[np.ndarray, object]], C: float = 10.0,
                    epsilon: float = 1e-4, max_iterations: int = 500,
                    classes: Sequence | None = None) -> LinearClassifier:
    """One-vs-all linear SVMs. Class order is ``classes`` or sorted labels seen."""
    X = np.array([np.append(np.asarray(x, float), 1.0) for x, _ in examples])
    labels = [c for _, c in examples]
    classes = list(classes) if classes is not None else sorted(set(labels))
    present = set(labels)
    if len(present) < 2:
        warnings.warn("high-level training set has a single class; classifier is constant",
                      stacklevel=2)
        W = np.zeros((len(classes), X.shape[1]))
        if labels:
            W[classes.index(labels[0]), -1] = 1.0
        return LinearClassifier(W, classes)
    W = np.zeros((len(classes), X.shape[1]))
    for c_idx, c in enumerate(classes):
        if c not in present:
            W[c_idx, -1] = -1e6
            continue
        y = np.array([1.0 if l == c else -1.0 for l in labels])
        W[c_idx] = _binary_svm(X, y, C, epsilon, max_iterations)
    return LinearClassifier(W, classes)


def classify(model: LinearClassifier, features):
    return model.classify(features)
