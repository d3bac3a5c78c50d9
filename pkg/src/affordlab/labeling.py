"""Integral and half-integral label assignments over a segment graph."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import SegmentGraph
from .labels import LabelSpace


class LabelingError(ValueError):
    pass


@dataclass(frozen=True)
class Labeling:
    """One label index per node, in canonical node order."""

    labels: tuple[int, ...]

    def __init__(self, labels: Sequence[int]):
        object.__setattr__(self, "labels", tuple(int(k) for k in labels))

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return self.labels[i]

    def check(self, graph: SegmentGraph, labels: LabelSpace) -> None:
        if len(self.labels) != graph.n_nodes:
            raise LabelingError(f"labeling has {len(self.labels)} entries, graph has {graph.n_nodes} nodes")
        for i, k in enumerate(self.labels):
            if not 0 <= k < graph.n_labels(i, labels):
                raise LabelingError(f"label {k} out of range for node {i}")

    def indicators(self, graph: SegmentGraph, labels: LabelSpace) -> list[np.ndarray]:
        out = []
        for i, k in enumerate(self.labels):
            v = np.zeros(graph.n_labels(i, labels))
            v[k] = 1.0
            out.append(v)
        return out

    def to_relaxed(self, graph: SegmentGraph, labels: LabelSpace) -> "RelaxedLabeling":
        y = self.indicators(graph, labels)
        z = [np.outer(y[e.i], y[e.j]) for e in graph.edges]
        return RelaxedLabeling(y, z)


class RelaxedLabeling:
    """Indicator values ``y[i][k]`` and auxiliary pair values ``z[e][l, k]``.

    Values are expected in {0, 0.5, 1}; the linking constraints between ``z``
    and ``y`` are checked by :meth:`check_constraints`.
    """

    def __init__(self, y, z):
        self.y = [np.asarray(v, dtype=float) for v in y]
        self.z = [np.asarray(v, dtype=float) for v in z]

    def check_constraints(self, graph: SegmentGraph, tol=1e-9) -> bool:
        for e, z in zip(graph.edges, self.z):
            yi = self.y[e.i][:, None]
            yj = self.y[e.j][None, :]
            if (z > yi + tol).any() or (z > yj + tol).any() or (yi + yj > z + 1 + tol).any():
                return False
        return True

    def is_half_integral(self, tol=1e-6) -> bool:
        vals = np.concatenate([v.ravel() for v in self.y + self.z]) if self.y else np.zeros(0)
        return bool(np.all(np.min(np.abs(vals[:, None] - np.array([0.0, 0.5, 1.0])), axis=1) <= tol))

    def is_integral_onehot(self, tol=1e-9) -> bool:
        for v in self.y:
            if np.any(np.abs(v - np.round(v)) > tol) or abs(v.sum() - 1) > tol:
                return False
        return True

    def to_labeling(self) -> Labeling:
        """Round by taking the largest indicator per node, ties to the lowest label."""
        return Labeling([int(np.argmax(v)) for v in self.y])
