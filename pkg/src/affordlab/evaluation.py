"""Classification metrics and leave-one-subject-out folds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class AlignmentError(ValueError):
    pass


@dataclass
class Metrics:
    """Confusion rows are true classes, columns predicted classes.

    Per-class precision is NaN for a class never predicted and recall is NaN
    for a class never present; macro averages use only the defined values, so
    classes missing from both truth and prediction never count.
    """

    classes: list
    confusion: np.ndarray

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.n) if self.n else math.nan

    @property
    def micro_precision(self) -> float:
        # one label per instance: every miss is one false positive and one false negative
        tp = np.trace(self.confusion)
        fp = self.confusion.sum(axis=0).sum() - tp
        return float(tp / (tp + fp)) if self.n else math.nan

    @property
    def micro_recall(self) -> float:
        tp = np.trace(self.confusion)
        fn = self.confusion.sum(axis=1).sum() - tp
        return float(tp / (tp + fn)) if self.n else math.nan

    @property
    def precision(self) -> np.ndarray:
        col = self.confusion.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(col > 0, np.diag(self.confusion) / col, np.nan)

    @property
    def recall(self) -> np.ndarray:
        row = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(row > 0, np.diag(self.confusion) / row, np.nan)

    @property
    def macro_precision(self) -> float:
        p = self.precision
        return float(np.nanmean(p)) if np.any(~np.isnan(p)) else math.nan

    @property
    def macro_recall(self) -> float:
        r = self.recall
        return float(np.nanmean(r)) if np.any(~np.isnan(r)) else math.nan

    def summary(self) -> dict:
        return {"n": self.n, "accuracy": self.accuracy,
                "micro_precision": self.micro_precision, "micro_recall": self.micro_recall,
                "macro_precision": self.macro_precision, "macro_recall": self.macro_recall}

    def to_dict(self) -> dict:
        def num(x):
            return None if math.isnan(x) else float(x)
        d = {k: num(v) if isinstance(v, float) else v for k, v in self.summary().items()}
        d["classes"] = list(self.classes)
        d["per_class_precision"] = [num(v) for v in self.precision]
        d["per_class_recall"] = [num(v) for v in self.recall]
        d["confusion"] = self.confusion.astype(int).tolist()
        return d

    def confusion_csv(self) -> str:
        head = "truth\\pred," + ",".join(str(c) for c in self.classes)
        rows = [f"{c}," + ",".join(str(int(v)) for v in row)
                for c, row in zip(self.classes, self.confusion)]
        return "\n".join([head, *rows]) + "\n"


def evaluate(pred: Sequence, truth: Sequence, classes: Sequence) -> Metrics:
    """Metrics over aligned instance sequences; labels may be names or indices into ``classes``."""
    pred, truth = list(pred), list(truth)
    if len(pred) != len(truth):
        raise AlignmentError(f"{len(pred)} predictions for {len(truth)} instances")
    classes = list(classes)
    index = {c: i for i, c in enumerate(classes)}

    def idx(v):
        if v in index:
            return index[v]
        if isinstance(v, (int, np.integer)) and 0 <= v < len(classes):
            return int(v)
        raise AlignmentError(f"unknown class {v!r}")

    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(pred, truth):
        cm[idx(t), idx(p)] += 1
    return Metrics(classes, cm)


def pooled(metrics: Sequence[Metrics]) -> Metrics:
    return Metrics(metrics[0].classes, sum(m.confusion for m in metrics))


def mean_and_stderr(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error (sample std / sqrt(n)); NaN entries are dropped."""
    v = np.array([x for x in values if x is not None and not math.isnan(x)], dtype=float)
    if len(v) == 0:
        return math.nan, math.nan
    if np.all(v == v[0]):
        return float(v[0]), 0.0  # exact, avoids round-off in the mean
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def subject_folds(subjects: Sequence[str], n_folds: int | None = None
                  ) -> list[tuple[list[str], list[int], list[int]]]:
    """(held-out subjects, train indices, test indices) per fold.

    Subjects are taken in sorted order; with ``n_folds`` below the subject
    count they are dealt round-robin into folds. The default is one fold per
    subject (leave-one-subject-out).
    """
    names = sorted(set(subjects))
    if len(names) < 2:
        raise ValueError("subject-wise cross-validation needs at least two subjects")
    k = len(names) if n_folds is None else int(n_folds)
    if not 2 <= k <= len(names):
        raise ValueError(f"fold count must be between 2 and {len(names)}")
    groups = [names[f::k] for f in range(k)]
    folds = []
    for group in groups:
        held = set(group)
        test = [i for i, x in enumerate(subjects) if x in held]
        train = [i for i, x in enumerate(subjects) if x not in held]
        folds.append((list(group), train, test))
    return folds


def loso_folds(subjects: Sequence[str]):
    return subject_folds(subjects, None)


def split_theta_subject(subjects: Sequence[str], train_idx: Sequence[int]) -> tuple[list[int], list[int]]:
    """Reserve the last (in sorted order) training subject for theta learning."""
    names = sorted({subjects[i] for i in train_idx})
    if len(names) < 2:
        raise ValueError("reserving a theta subject needs at least two training subjects")
    held = names[-1]
    return ([i for i in train_idx if subjects[i] != held],
            [i for i in train_idx if subjects[i] == held])


def aggregate(fold_metrics: Sequence[Metrics]) -> dict:
    """Per-statistic mean and standard error across folds, plus pooled counts."""
    out = {}
    for key in ("accuracy", "micro_precision", "micro_recall", "macro_precision", "macro_recall"):
        m, se = mean_and_stderr([getattr(f, key) for f in fold_metrics])
        out[key] = {"mean": None if math.isnan(m) else m, "stderr": None if math.isnan(se) else se}
    out["pooled"] = pooled(fold_metrics).to_dict()
    return out
