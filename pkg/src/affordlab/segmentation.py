"""Temporal segmentation: uniform windows and graph-based merging on the frame chain."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .streams import Skeleton


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentationHypothesis:
    method: str
    params: dict
    ranges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "ranges", tuple((int(a), int(b)) for a, b in self.ranges))

    @property
    def num_frames(self) -> int:
        return self.ranges[-1][1] + 1 if self.ranges else 0

    def __len__(self):
        return len(self.ranges)

    def segment_of_frame(self) -> np.ndarray:
        out = np.empty(self.num_frames, dtype=int)
        for s, (a, b) in enumerate(self.ranges):
            out[a:b + 1] = s
        return out

    def is_partition(self, num_frames: int) -> bool:
        if not self.ranges or self.ranges[0][0] != 0 or self.ranges[-1][1] != num_frames - 1:
            return False
        return all(a <= b for a, b in self.ranges) and all(
            a1 == b0 + 1 for (_, b0), (a1, _) in zip(self.ranges, self.ranges[1:]))

    def to_record(self) -> dict:
        return {"method": self.method, "params": self.params,
                "ranges": [list(r) for r in self.ranges]}

    @classmethod
    def from_record(cls, d: dict) -> "SegmentationHypothesis":
        return cls(d["method"], dict(d.get("params", {})), tuple(tuple(r) for r in d["ranges"]))


def uniform_segment(num_frames: int, size: int, offset: int = 0) -> SegmentationHypothesis:
    """Fixed-size windows; a non-zero ``offset`` is the length of the first window."""
    if num_frames < 1 or size < 1 or not 0 <= offset < size:
        raise SegmentationError(f"invalid uniform parameters ({num_frames}, {size}, {offset})")
    ranges = []
    start = 0
    if offset:
        ranges.append((0, min(offset, num_frames) - 1))
        start = offset
    while start < num_frames:
        ranges.append((start, min(start + size, num_frames) - 1))
        start += size
    return SegmentationHypothesis("uniform", {"size": size, "offset": offset}, tuple(ranges))


def motion_weights(skeleton: Skeleton | np.ndarray, mode: str) -> np.ndarray:
    """Chain edge weights between frame t and t+1.

    ``joint_distance``: summed displacement of the 8 head-relative upper-body
    joints. ``joint_distance_rate``: absolute change of that sum from the
    previous edge (0 for the first edge).
    """
    pos = skeleton.positions if isinstance(skeleton, Skeleton) else np.asarray(skeleton, float)
    rel = pos[:, 1:, :] - pos[:, :1, :]
    dist = np.linalg.norm(np.diff(rel, axis=0), axis=2).sum(axis=1)
    if mode == "joint_distance":
        return dist
    if mode == "joint_distance_rate":
        if len(dist) == 0:
            return dist
        return np.abs(np.diff(dist, prepend=dist[0]))
    raise SegmentationError(f"unknown weight mode {mode!r}")


@dataclass
class MergeTrace:
    """Every chain edge in processing order and whether it merged."""

    steps: list = field(default_factory=list)   # (edge, weight, threshold, merged)


def chain_merge(weights: Sequence[float], k: float, trace: MergeTrace | None = None
                ) -> list[tuple[int, int]]:
    """Graph-based merging on a chain of ``len(weights) + 1`` frames.

    Edges are visited by ascending weight (ties in frame order). Components
    C1, C2 merge iff  w <= min(Int(C1) + k/|C1|, Int(C2) + k/|C2|), with Int
    the largest internal edge weight (0 for a single frame).
    """
    if not k > 0:
        raise SegmentationError("k must be positive")
    weights = np.asarray(weights, dtype=float)
    n = len(weights) + 1
    parent = list(range(n))
    size = [1] * n
    internal = [0.0] * n

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in np.argsort(weights, kind="stable"):
        e = int(e)
        a, b = find(e), find(e + 1)
        w = float(weights[e])
        thr = min(internal[a] + k / size[a], internal[b] + k / size[b])
        merged = w <= thr
        if merged:
            parent[b] = a
            size[a] += size[b]
            internal[a] = max(internal[a], internal[b], w)
        if trace is not None:
            trace.steps.append((e, w, thr, merged))
    ranges = []
    start = 0
    for t in range(1, n):
        if find(t) != find(t - 1):
            ranges.append((start, t - 1))
            start = t
    ranges.append((start, n - 1))
    return ranges


_MODES = {"chain-dist": "joint_distance", "chain-rate": "joint_distance_rate",
          "joint_distance": "joint_distance", "joint_distance_rate": "joint_distance_rate"}


def chain_segment(skeleton: Skeleton, weight_mode: str = "joint_distance", k: float = 1.0,
                  trace: MergeTrace | None = None) -> SegmentationHypothesis:
    mode = _MODES.get(weight_mode)
    if mode is None:
        raise SegmentationError(f"unknown weight mode {weight_mode!r}")
    n = len(skeleton)
    method = "chain-dist" if mode == "joint_distance" else "chain-rate"
    if n < 2:
        return SegmentationHypothesis(method, {"k": k}, ((0, max(n, 1) - 1),))
    ranges = chain_merge(motion_weights(skeleton, mode), k, trace)
    return SegmentationHypothesis(method, {"k": k}, tuple(ranges))


def segment(skeleton: Skeleton, method: str, **params) -> SegmentationHypothesis:
    if method == "uniform":
        return uniform_segment(len(skeleton), int(params["size"]), int(params.get("offset", 0)))
    if method in ("chain-dist", "chain-rate"):
        return chain_segment(skeleton, method, float(params["k"]))
    raise SegmentationError(f"unknown segmentation method {method!r}")


def make_hypothesis_set(skeleton: Skeleton, config: Sequence[tuple[str, dict]]
                        ) -> list[SegmentationHypothesis]:
    """One hypothesis per (method, params) entry; identical partitions kept once."""
    out, seen = [], set()
    for method, params in config:
        h = segment(skeleton, method, **params)
        if h.ranges not in seen:
            seen.add(h.ranges)
            out.append(h)
    return out
