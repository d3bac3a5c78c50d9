"""Detection graph over detection frames and best-track extraction.

Appearance similarity is supplied by the caller (precomputed values or a
callable); nothing here touches pixels.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


def track_score(sim_prev_det: float, sim_tracked_det: float, D: float, lam: float = 1.0) -> float:
    """Edge score: similarity to the previous detection, to its tracked box, plus lam * D."""
    return sim_prev_det + sim_tracked_det + lam * D


class Category(str, enum.Enum):
    MERGED = "merged"
    ISOLATED = "isolated"
    IGNORED = "ignored"


@dataclass(frozen=True)
class TrackerThresholds:
    distance: float = 30.0           # pixels between box centers
    merge_similarity: float = 0.7
    detection_score: float = 0.5
    isolated_similarity: float = 0.5


@dataclass(frozen=True)
class Detection:
    frame: int                 # detection-frame index
    det_id: int
    score: float
    bbox: tuple = (0.0, 0.0, 0.0, 0.0)   # x_min, y_min, x_max, y_max

    @property
    def key(self):
        return (self.frame, self.det_id)

    @property
    def center(self) -> np.ndarray:
        x0, y0, x1, y1 = self.bbox
        return np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])


@dataclass(frozen=True)
class TrackedBox:
    track_id: object
    bbox: tuple

    @property
    def center(self) -> np.ndarray:
        x0, y0, x1, y1 = self.bbox
        return np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])


def categorize_detection(detection: Detection, current_tracks: Sequence[TrackedBox],
                         thresholds: TrackerThresholds,
                         similarity: Callable[[Detection, TrackedBox], float],
                         previous_tracked: Sequence[TrackedBox] | None = None) -> Category:
    for t in current_tracks:
        close = np.linalg.norm(detection.center - t.center) <= thresholds.distance
        if close and similarity(detection, t) >= thresholds.merge_similarity:
            return Category.MERGED
    prev = current_tracks if previous_tracked is None else previous_tracked
    if detection.score >= thresholds.detection_score and any(
            similarity(detection, t) >= thresholds.isolated_similarity for t in prev):
        return Category.ISOLATED
    return Category.IGNORED


class TrackGraphError(ValueError):
    pass


@dataclass
class DetectionGraph:
    """Directed graph whose edges join detections in consecutive detection frames."""

    nodes: dict = field(default_factory=dict)     # key -> Detection
    succ: dict = field(default_factory=dict)      # key -> {key: score}

    def add_detection(self, d: Detection) -> None:
        self.nodes[d.key] = d
        self.succ.setdefault(d.key, {})

    def add_edge(self, u, v, score: float) -> None:
        if u not in self.nodes or v not in self.nodes:
            raise TrackGraphError(f"edge {u}->{v} references an unknown detection")
        if v[0] != u[0] + 1:
            raise TrackGraphError(f"edge {u}->{v} does not join consecutive detection frames")
        if not np.isfinite(score):
            raise TrackGraphError("track scores must be finite")
        self.succ[u][v] = float(score)

    def edges(self):
        for u in sorted(self.succ):
            for v in sorted(self.succ[u]):
                yield u, v, self.succ[u][v]

    @classmethod
    def from_records(cls, records: Iterable[dict], lam: float = 1.0) -> "DetectionGraph":
        """Build from detection records.

        Each record has ``frame_index``, ``detection_id``, ``score``, ``bbox`` and
        optional ``sim_prev`` / ``sim_tracked`` maps from previous-frame detection
        id to similarity. An edge is created for every id in ``sim_prev``.
        """
        g = cls()
        recs = sorted(records, key=lambda r: (int(r["frame_index"]), int(r["detection_id"])))
        for r in recs:
            g.add_detection(Detection(int(r["frame_index"]), int(r["detection_id"]),
                                      float(r["score"]), tuple(r.get("bbox", (0, 0, 0, 0)))))
        for r in recs:
            v = (int(r["frame_index"]), int(r["detection_id"]))
            sp = {int(k): float(s) for k, s in r.get("sim_prev", {}).items()}
            st = {int(k): float(s) for k, s in r.get("sim_tracked", {}).items()}
            for k in sorted(sp):
                u = (v[0] - 1, k)
                g.add_edge(u, v, track_score(sp[k], st.get(k, 0.0), g.nodes[v].score, lam))
        return g

    def backward(self, isolated: Iterable) -> "DetectionGraph":
        """Graph of reversed edges into each isolated detection, for tracking back in time.

        Frames are mirrored so the reversed edges still join consecutive frames.
        """
        isolated = set(isolated)
        last = max((k[0] for k in self.nodes), default=0)
        mirror = {k: (last - k[0], k[1]) for k in self.nodes}
        g = DetectionGraph()
        for k, d in self.nodes.items():
            g.add_detection(Detection(mirror[k][0], d.det_id, d.score, d.bbox))
        for u, v, s in self.edges():
            if v in isolated:
                g.add_edge(mirror[v], mirror[u], s)
        return g


def _path_key(path):
    # a path sorts before any of its own prefixes, so ties prefer going on
    return [(0,) + tuple(k) for k in path] + [(1,)]


def best_track(graph: DetectionGraph, start) -> tuple[list, float]:
    """Highest cumulative-score path from ``start``; ties to the smallest node sequence."""
    start = tuple(start)
    if start not in graph.nodes:
        raise TrackGraphError(f"start node {start} not in graph")
    best: dict = {}
    for u in sorted(graph.nodes, key=lambda k: (-k[0], k[1])):
        cand_path, cand_score = [u], 0.0
        for v, s in graph.succ[u].items():
            path = [u] + best[v][0]
            score = s + best[v][1]
            if score > cand_score or (score == cand_score and _path_key(path) < _path_key(cand_path)):
                cand_path, cand_score = path, score
        best[u] = (cand_path, cand_score)
    path = best[start][0]
    # re-add along the path from its start so the total does not depend on
    # the backward order the table was filled in
    score = 0.0
    for u, v in zip(path, path[1:]):
        score += graph.succ[u][v]
    return path, score


def load_detection_records(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                for key in ("frame_index", "detection_id", "score"):
                    if key not in r:
                        raise KeyError(key)
            except (json.JSONDecodeError, KeyError) as exc:
                raise TrackGraphError(f"{path}:{lineno}: bad detection record ({exc})") from None
            out.append(r)
    return out
